#pragma once

// Classifier zoo for FC matrices treated as one-channel images: residual
// backbones (R10, R18) with an optional channel-attention or transformer
// head, the training loop, prediction and the binary metric suite.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gcan/archive.hpp"
#include "gcan/counterfactual.hpp"
#include "gcan/fc.hpp"
#include "gcan/nn.hpp"

namespace gcan::diag {

using ad::Tensor;

enum class Backbone { R10, R18 };
enum class Head { None, ChannelAttention, Transformer };

std::string_view to_string(Backbone b);
std::string_view to_string(Head h);
Backbone parse_backbone(std::string_view s);
Head parse_head(std::string_view s);

struct ClassifierConfig {
    Backbone backbone = Backbone::R10;
    Head head = Head::Transformer;
    int transformer_heads = 16;  // 8 (S), 16 (B) or 32 (L); 0 unless head is Transformer
    int num_classes = 2;
    int input_size = 160;
    int base_width = 8;  // channels of the first stage; doubled per stage

    // Throws ConfigError for inconsistent combinations.
    void validate() const;
    // Short model tag, e.g. "RT-B10" or "R//18".
    std::string tag() const;
};

struct BasicBlock {
    nn::Conv2d conv1, conv2;
    nn::GroupNorm norm1, norm2;
    bool has_shortcut = false;
    nn::Conv2d shortcut;
    nn::GroupNorm shortcut_norm;

    BasicBlock() = default;
    BasicBlock(int in, int out, int stride, nn::Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(nn::ParamList& out, const std::string& prefix) const;
};

class Classifier {
public:
    Classifier() = default;
    Classifier(ClassifierConfig config, std::uint64_t seed);

    // (N, N) input -> logits [num_classes].
    Tensor forward(const Tensor& input) const;
    const ClassifierConfig& config() const { return config_; }
    nn::ParamList params() const;

    Archive to_archive() const;
    static Classifier from_archive(const Archive& archive);

private:
    ClassifierConfig config_;
    nn::Conv2d stem_;
    nn::GroupNorm stem_norm_;
    std::vector<BasicBlock> blocks_;
    // channel attention (squeeze-excitation)
    nn::Linear se_reduce_, se_expand_;
    Tensor position_;  // [tokens, channels]
    std::vector<nn::TransformerBlock> transformer_;
    nn::LayerNorm final_norm_;
    nn::Linear fc_;
};

void save_classifier(const Classifier& cls, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

// Binary task; class 0 is `negative`, class 1 `positive` (the later stage).
struct Task {
    Label negative = Label::HC;
    Label positive = Label::MCI;

    // Orders the pair so the later-stage label is positive.
    static Task of(Label a, Label b);
    std::string name() const;  // e.g. "HC-vs-MCI"
    int class_of(Label l) const;
    Label label_of(int cls) const { return cls == 0 ? negative : positive; }
};

struct Mask {
    cf::AttentionMap map;
    double floor = 0.2;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 16;
    double learning_rate = 1e-4;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    int early_stop_patience = 20;

    void validate() const;
};

struct Metrics {
    double acc = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    Metrics val;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;  // -1 when no epoch ran
};

struct Example {
    Tensor input;  // (N, N) constant
    int target = 0;
    std::string id;
};

// Subjects of the task's two labels in `split`, masked when `mask` is given,
// in cohort order.
std::vector<Example> make_examples(const Cohort& cohort, const Task& task, Split split, const Mask* mask = nullptr);

// Adam on mean cross-entropy; keeps the parameters of the epoch with the best
// validation F1, ties going to the lower validation loss. Throws EmptyClassError when a task label has no training
// subject and DivergenceError on a non-finite loss.
TrainResult train_classifier(Classifier& cls, const Cohort& cohort, const Task& task, const Mask* mask,
                             const TrainConfig& tc);
TrainResult train_classifier(Classifier& cls, const std::vector<Example>& train, const std::vector<Example>& val,
                             const TrainConfig& tc);

struct Prediction {
    int label = 0;
    std::vector<double> probabilities;
};

// Softmax of the logits and argmax with ties toward the lower index.
Prediction predict_logits(std::span<const double> logits);
std::vector<Prediction> predict(const Classifier& cls, std::span<const Tensor> inputs);

// `positive` is the class index treated as positive.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truths, int positive);
Metrics evaluate(const Classifier& cls, const std::vector<Example>& examples);
double mean_loss(const Classifier& cls, const std::vector<Example>& examples);

}  // namespace gcan::diag
