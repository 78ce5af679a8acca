#pragma once

// GCAN core: the AABT generator (encoder, combiner, mirrored decoder), the
// image and neurodegeneration discriminators, the generator and
// discriminator losses, and the alternating training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gcan/aabt.hpp"
#include "gcan/archive.hpp"
#include "gcan/diagnoser.hpp"
#include "gcan/perceptual.hpp"

namespace gcan::engine {

using ad::Tensor;

inline constexpr double kLogEps = 1e-7;
inline constexpr double kDivergenceLimit = 1e4;

// What the combiner projects before its output is added to the encoder tokens:
// the target-mean tokens themselves, or their offset from the subject's own
// encoding (identity-initialized, so training starts from a decode of the
// target mean).
enum class CombinerInput { Target, Offset };

std::string_view to_string(CombinerInput c);
CombinerInput parse_combiner_input(std::string_view s);

struct GcanConfig {
    aabt::AabtConfig generator;      // depth 3
    aabt::AabtConfig discriminator;  // depth 8
    CombinerInput combiner = CombinerInput::Offset;
    double noise_sigma = 0.05;
    int steps = 200;
    int batch_size = 1;
    double generator_lr = 1e-4;
    double discriminator_lr = 1e-4;
    std::uint64_t seed = 0;

    // Generator depth 3 and discriminator depth 8 on `atlas`.
    static GcanConfig defaults(AtlasPtr atlas);
    void validate() const;
};

class Generator {
public:
    Generator() = default;
    Generator(const aabt::AabtConfig& config, CombinerInput input, nn::Rng& rng);

    aabt::FeatureMap encode(const Tensor& fc) const { return encoder_.encode(fc); }
    // Token-wise combiner output for the encoded source `z`.
    aabt::FeatureMap combine(const aabt::FeatureMap& target, const aabt::FeatureMap& z) const;
    Tensor decode(const aabt::FeatureMap& features) const { return decoder_.decode(features); }

    aabt::AabtEncoder& encoder() { return encoder_; }
    nn::Linear& combiner() { return combiner_; }
    const aabt::AabtConfig& config() const { return encoder_.config(); }
    nn::ParamList params() const;
    // Sets the combiner weights and bias to zero.
    void zero_combiner();

private:
    aabt::AabtEncoder encoder_;
    CombinerInput input_ = CombinerInput::Offset;
    nn::Linear combiner_;
    aabt::AabtDecoder decoder_;
};

struct Generated {
    Tensor c_g_s;
    Tensor c_g_t;
};

// z = enc(c_n_s); c_g_s = dec(z); c_g_t = dec(z + combiner(target_feature[ - z])).
Generated generate(const Tensor& c_n_s, const aabt::FeatureMap& target_feature, const Generator& gen);

class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const aabt::AabtConfig& config, nn::Rng& rng);

    // D_i: one logit per AABT token, [total_tokens, 1].
    Tensor image_logits(const Tensor& fc) const;
    // D_n: AABT to_fc path with an unconstrained head, (N, N).
    Tensor neuro_map(const Tensor& fc) const { return neuro_.to_fc(fc); }

    nn::ParamList params() const;

private:
    aabt::AabtEncoder image_;
    nn::Linear image_out_;
    aabt::Aabt neuro_;
};

struct LossReport {
    double l_p = 0, l_gen = 0, l_c = 0, l_G = 0;
    double l_dc = 0, l_dsl = 0, l_dtl = 0, l_dD = 0, l_D = 0;

    bool finite() const;
    double max_abs() const;
};

Tensor recon_loss(const Tensor& c_g_s, const Tensor& c_r_s);
Tensor label_ce_loss(const Tensor& c_g_t, int target_class, const diag::Classifier& cls);
// mean{ log[1 - S(a)] * log[S(b)] } with each log input clamped to [eps, 1].
Tensor disc_image_loss(const Tensor& logits_generated, const Tensor& logits_real);
// mean{ log[1 - S(a)] * log[1 - S(b)] }, same clamping.
Tensor disc_divergence_loss(const Tensor& logits_source, const Tensor& logits_target);
// (CE(cls(D_n(c_g_s)), y_s), CE(cls(D_n(c_g_t)), y_t))
std::pair<Tensor, Tensor> disc_label_losses(const Tensor& c_g_s, const Tensor& c_g_t, int source_class, int target_class,
                                            const Discriminator& d, const diag::Classifier& cls);

struct GeneratorTerms {
    Tensor l_p, l_gen, l_c;
    Tensor total() const { return ad::add(ad::add(l_p, l_c), l_gen); }
};

struct DiscriminatorTerms {
    Tensor l_dc, l_dsl, l_dtl, l_dD;
    Tensor total() const { return ad::add(ad::add(l_dc, l_dsl), ad::add(l_dtl, l_dD)); }
};

// One sample's generator losses: noisy input, its clean source FC, the target
// feature map and the target class.
GeneratorTerms generator_terms(const Generator& gen, const Tensor& c_n_s, const Tensor& c_r_s,
                               const aabt::FeatureMap& target_feature, const diag::Classifier& cls, int target_class,
                               const PerceptualExtractor& px);
// One sample's discriminator losses on a generated pair and the clean source FC.
DiscriminatorTerms discriminator_terms(const Discriminator& d, const Generated& g, const Tensor& c_r_s,
                                       const diag::Classifier& cls, int source_class, int target_class);

// Unweighted sums; the report's totals are set from its parts.
double generator_loss(const LossReport& parts);
double discriminator_loss(const LossReport& parts);

struct GcanModel {
    GcanConfig config;
    Generator generator;
    Discriminator discriminator;
    Label source = Label::HC;
    Label target = Label::MCI;
};

GcanModel make_model(const GcanConfig& config, Label source, Label target);

struct TrainHistory {
    std::vector<LossReport> steps;
};

using StepCallback = std::function<void(int step, const LossReport&)>;

// Alternating optimization over batches of training-split source subjects:
// a discriminator step on L_D with the generator frozen, then a generator
// step on L_G with the discriminators frozen. The frozen classifier is never
// updated. Throws DivergenceError when a loss is non-finite or exceeds 1e4.
TrainHistory train_gcan(GcanModel& model, const Cohort& cohort, const diag::Classifier& cls, const diag::Task& task,
                        const PerceptualExtractor& px, const StepCallback& on_step = {});

// The generated pair for one subject with a deterministic noise draw.
Generated generate_for(const GcanModel& model, const FcMatrix& source_fc, const aabt::FeatureMap& target_feature,
                       std::uint64_t noise_seed);
// enc(mean target FC of the training split).
aabt::FeatureMap target_feature(const GcanModel& model, const Cohort& cohort);

void save_model(const GcanModel& model, const std::filesystem::path& path);
GcanModel load_model(const std::filesystem::path& path, AtlasPtr atlas);

// CSV `step,l_p,l_gen,l_c,l_G,l_dc,l_dsl,l_dtl,l_dD,l_D`.
void save_history(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace gcan::engine
