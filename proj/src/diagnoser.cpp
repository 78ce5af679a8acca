#include "gcan/diagnoser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gcan/csv.hpp"
#include "gcan/error.hpp"
#include "gcan/optim.hpp"

namespace gcan::diag {

namespace {

int groups_for(int channels) { return std::max(1, channels / 4); }

int conv_out(int n, int stride) { return (n + 2 - 3) / stride + 1; }

// Spatial side after the stem (stride-2 conv + 2x2 pool) and three stride-2 stages.
int final_side(int n) {
    int s = conv_out(n, 2) / 2;
    for (int i = 0; i < 3; ++i) s = conv_out(s, 2);
    return s;
}

template <typename E>
E parse_enum(std::string_view s, std::initializer_list<std::pair<std::string_view, E>> table, const char* what) {
    for (const auto& [name, value] : table)
        if (name == s) return value;
    throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::R10 ? "R10" : "R18"; }

std::string_view to_string(Head h) {
    switch (h) {
        case Head::None: return "none";
        case Head::ChannelAttention: return "channel_attention";
        default: return "transformer";
    }
}

Backbone parse_backbone(std::string_view s) {
    return parse_enum<Backbone>(s, {{"R10", Backbone::R10}, {"R18", Backbone::R18}}, "backbone");
}

Head parse_head(std::string_view s) {
    return parse_enum<Head>(
        s, {{"none", Head::None}, {"channel_attention", Head::ChannelAttention}, {"transformer", Head::Transformer}},
        "head");
}

void ClassifierConfig::validate() const {
    if (head == Head::Transformer) {
        if (transformer_heads != 8 && transformer_heads != 16 && transformer_heads != 32)
            throw ConfigError("transformer head count must be 8, 16 or 32");
        if ((base_width * 8) % transformer_heads != 0)
            throw ConfigError("final channel count " + std::to_string(base_width * 8) + " not divisible by " +
                              std::to_string(transformer_heads) + " heads");
    } else if (transformer_heads != 0) {
        throw ConfigError("transformer_heads is only meaningful with the transformer head");
    }
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (base_width < 4 || base_width % 4 != 0) throw ConfigError("base_width must be a positive multiple of 4");
    if (input_size < 8) throw ConfigError("input_size must be at least 8");
}

std::string ClassifierConfig::tag() const {
    const std::string depth = backbone == Backbone::R10 ? "10" : "18";
    switch (head) {
        case Head::None: return "R//" + depth;
        case Head::ChannelAttention: return "RA" + depth;
        default: {
            const char size = transformer_heads == 8 ? 'S' : transformer_heads == 16 ? 'B' : 'L';
            return std::string("RT-") + size + depth;
        }
    }
}

BasicBlock::BasicBlock(int in, int out, int stride, nn::Rng& rng)
    : conv1(in, out, 3, stride, 1, false, rng),
      conv2(out, out, 3, 1, 1, false, rng),
      norm1(out, groups_for(out)),
      norm2(out, groups_for(out)),
      has_shortcut(stride != 1 || in != out) {
    if (has_shortcut) {
        shortcut = nn::Conv2d(in, out, 1, stride, 0, false, rng);
        shortcut_norm = nn::GroupNorm(out, groups_for(out));
    }
}

Tensor BasicBlock::forward(const Tensor& x) const {
    Tensor h = ad::relu(norm1.forward(conv1.forward(x)));
    h = norm2.forward(conv2.forward(h));
    const Tensor skip = has_shortcut ? shortcut_norm.forward(shortcut.forward(x)) : x;
    return ad::relu(ad::add(h, skip));
}

void BasicBlock::collect(nn::ParamList& out, const std::string& prefix) const {
    conv1.collect(out, nn::join(prefix, "conv1"));
    norm1.collect(out, nn::join(prefix, "norm1"));
    conv2.collect(out, nn::join(prefix, "conv2"));
    norm2.collect(out, nn::join(prefix, "norm2"));
    if (has_shortcut) {
        shortcut.collect(out, nn::join(prefix, "shortcut"));
        shortcut_norm.collect(out, nn::join(prefix, "shortcut_norm"));
    }
}

Classifier::Classifier(ClassifierConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    nn::Rng rng(seed);
    const int w = config_.base_width;
    stem_ = nn::Conv2d(1, w, 3, 2, 1, false, rng);
    stem_norm_ = nn::GroupNorm(w, groups_for(w));
    const int per_stage = config_.backbone == Backbone::R10 ? 1 : 2;
    int in = w;
    for (int stage = 0; stage < 4; ++stage) {
        const int out = w << stage;
        for (int b = 0; b < per_stage; ++b) {
            blocks_.emplace_back(in, out, (stage > 0 && b == 0) ? 2 : 1, rng);
            in = out;
        }
    }
    if (config_.head == Head::ChannelAttention) {
        se_reduce_ = nn::Linear(in, std::max(1, in / 4), rng);
        se_expand_ = nn::Linear(std::max(1, in / 4), in, rng);
    } else if (config_.head == Head::Transformer) {
        const int side = final_side(config_.input_size);
        position_ = nn::normal_param({side * side, in}, 0.02, rng);
        for (int b = 0; b < 2; ++b) transformer_.emplace_back(in, config_.transformer_heads, 4.0, rng);
        final_norm_ = nn::LayerNorm(in);
    }
    fc_ = nn::Linear(in, config_.num_classes, rng);
}

Tensor Classifier::forward(const Tensor& input) const {
    const int n = config_.input_size;
    if (input.rank() != 2 || input.dim(0) != n || input.dim(1) != n)
        throw ShapeError("classifier expects a (" + std::to_string(n) + ", " + std::to_string(n) + ") input, got " +
                         ad::shape_string(input.shape()));
    Tensor x = ad::reshape(input, {1, n, n});
    x = ad::avg_pool2(ad::relu(stem_norm_.forward(stem_.forward(x))));
    for (const auto& b : blocks_) x = b.forward(x);
    const int c = x.dim(0);
    Tensor pooled;
    if (config_.head == Head::Transformer) {
        Tensor tokens = ad::transpose(ad::reshape(x, {c, x.dim(1) * x.dim(2)}));
        tokens = ad::add(tokens, position_);
        for (const auto& blk : transformer_) tokens = blk.forward(tokens);
        pooled = ad::reshape(ad::mean_rows(final_norm_.forward(tokens)), {1, c});
    } else {
        if (config_.head == Head::ChannelAttention) {
            const Tensor squeeze = ad::reshape(ad::global_avg_pool(x), {1, c});
            const Tensor gate = ad::sigmoid(se_expand_.forward(ad::relu(se_reduce_.forward(squeeze))));
            x = ad::mul_channels(x, ad::reshape(gate, {c}));
        }
        pooled = ad::reshape(ad::global_avg_pool(x), {1, c});
    }
    return ad::reshape(fc_.forward(pooled), {config_.num_classes});
}

nn::ParamList Classifier::params() const {
    nn::ParamList out;
    stem_.collect(out, "stem");
    stem_norm_.collect(out, "stem_norm");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "block" + std::to_string(i));
    if (config_.head == Head::ChannelAttention) {
        se_reduce_.collect(out, "se.reduce");
        se_expand_.collect(out, "se.expand");
    } else if (config_.head == Head::Transformer) {
        out.push_back({"tokens.pos", position_});
        for (std::size_t i = 0; i < transformer_.size(); ++i) transformer_[i].collect(out, "transformer" + std::to_string(i));
        final_norm_.collect(out, "final_norm");
    }
    fc_.collect(out, "fc");
    return out;
}

Archive Classifier::to_archive() const {
    Archive a;
    a.meta["kind"] = "classifier";
    a.meta["backbone"] = std::string(to_string(config_.backbone));
    a.meta["head"] = std::string(to_string(config_.head));
    a.meta["transformer_heads"] = std::to_string(config_.transformer_heads);
    a.meta["num_classes"] = std::to_string(config_.num_classes);
    a.meta["input_size"] = std::to_string(config_.input_size);
    a.meta["base_width"] = std::to_string(config_.base_width);
    append_params(a, params());
    return a;
}

Classifier Classifier::from_archive(const Archive& archive) {
    if (archive.meta.count("kind") == 0 || archive.meta_value("kind") != "classifier")
        throw ParseError("archive does not hold a classifier", 0, 0);
    auto as_int = [&](const std::string& key) {
        const auto v = csv::parse_int(archive.meta_value(key));
        if (!v) throw ParseError("classifier archive: bad '" + key + "'", 0, 0);
        return static_cast<int>(*v);
    };
    ClassifierConfig c;
    c.backbone = parse_backbone(archive.meta_value("backbone"));
    c.head = parse_head(archive.meta_value("head"));
    c.transformer_heads = as_int("transformer_heads");
    c.num_classes = as_int("num_classes");
    c.input_size = as_int("input_size");
    c.base_width = as_int("base_width");
    Classifier cls(c, 0);
    restore_params(archive, cls.params());
    return cls;
}

void save_classifier(const Classifier& cls, const std::filesystem::path& path) { save_archive(cls.to_archive(), path); }

Classifier load_classifier(const std::filesystem::path& path) { return Classifier::from_archive(load_archive(path)); }

// ---- tasks and data --------------------------------------------------------

Task Task::of(Label a, Label b) {
    if (a == b) throw ConfigError("task needs two distinct labels");
    return a < b ? Task{a, b} : Task{b, a};
}

std::string Task::name() const { return std::string(to_string(negative)) + "-vs-" + std::string(to_string(positive)); }

int Task::class_of(Label l) const {
    if (l == negative) return 0;
    if (l == positive) return 1;
    throw ParameterError("label " + std::string(to_string(l)) + " is not part of task " + name());
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be positive");
}

std::vector<Example> make_examples(const Cohort& cohort, const Task& task, Split split, const Mask* mask) {
    std::vector<Example> out;
    for (const auto* s : cohort.select(split)) {
        if (s->label != task.negative && s->label != task.positive) continue;
        const FcMatrix fc = mask ? cf::mask_fc(s->fc, mask->map, mask->floor) : s->fc;
        out.push_back({Tensor::from_matrix(fc.values()), task.class_of(s->label), s->id});
    }
    return out;
}

// ---- training ----------------------------------------------------------------

TrainResult train_classifier(Classifier& cls, const Cohort& cohort, const Task& task, const Mask* mask,
                             const TrainConfig& tc) {
    for (Label l : {task.negative, task.positive})
        if (cohort.count(l, Split::Train) == 0)
            throw EmptyClassError("no training subjects labeled " + std::string(to_string(l)));
    return train_classifier(cls, make_examples(cohort, task, Split::Train, mask),
                            make_examples(cohort, task, Split::Val, mask), tc);
}

double mean_loss(const Classifier& cls, const std::vector<Example>& examples) {
    if (examples.empty()) throw ParameterError("mean_loss: no examples");
    ad::NoGradGuard guard;
    double total = 0.0;
    for (const auto& e : examples) total += ad::cross_entropy(cls.forward(e.input), e.target).item();
    return total / static_cast<double>(examples.size());
}

TrainResult train_classifier(Classifier& cls, const std::vector<Example>& train, const std::vector<Example>& val,
                             const TrainConfig& tc) {
    tc.validate();
    TrainResult result;
    if (tc.epochs == 0) return result;
    if (train.empty()) throw EmptyClassError("empty training set");

    const nn::ParamList params = cls.params();
    nn::set_trainable(params, true);
    optim::Adam adam(nn::tensors(params), {tc.learning_rate, 0.9, 0.999, 1e-8, tc.weight_decay});
    std::mt19937_64 rng(tc.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<std::vector<double>> best;
    double best_f1 = -1.0;
    double best_loss = 0.0;
    int since_best = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
            const double inv = 1.0 / static_cast<double>(end - start);
            adam.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const Example& ex = train[order[i]];
                Tensor loss = ad::cross_entropy(cls.forward(ex.input), ex.target);
                const double v = loss.item();
                if (!std::isfinite(v))
                    throw DivergenceError("classifier loss became non-finite at epoch " + std::to_string(epoch) +
                                          " on subject " + ex.id);
                loss_sum += v;
                ad::scale(loss, inv).backward();
            }
            adam.step();
        }
        EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), 0.0, {}};
        if (!val.empty()) {
            rec.val = evaluate(cls, val);
            rec.val_loss = mean_loss(cls, val);
        }
        result.history.push_back(rec);

        const bool better = rec.val.f1 > best_f1 || (rec.val.f1 == best_f1 && rec.val_loss < best_loss);
        if (better || val.empty()) {
            best_f1 = rec.val.f1;
            best_loss = rec.val_loss;
            result.best_epoch = epoch;
            since_best = 0;
            best.clear();
            for (const auto& p : params) best.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        } else if (++since_best >= tc.early_stop_patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        std::copy(best[i].begin(), best[i].end(), t.mutable_values().begin());
    }
    adam.zero_grad();
    return result;
}

// ---- prediction and metrics -------------------------------------------------

Prediction predict_logits(std::span<const double> logits) {
    if (logits.empty()) throw ShapeError("predict: empty logits");
    const double peak = *std::max_element(logits.begin(), logits.end());
    Prediction p;
    double total = 0.0;
    for (double l : logits) {
        p.probabilities.push_back(std::exp(l - peak));
        total += p.probabilities.back();
    }
    for (double& v : p.probabilities) v /= total;
    // max_element returns the first maximum, i.e. the lowest index on ties.
    p.label = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    return p;
}

std::vector<Prediction> predict(const Classifier& cls, std::span<const Tensor> inputs) {
    ad::NoGradGuard guard;
    std::vector<Prediction> out;
    out.reserve(inputs.size());
    for (const Tensor& x : inputs) out.push_back(predict_logits(cls.forward(x).values()));
    return out;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truths, int positive) {
    if (predictions.empty()) throw ParameterError("compute_metrics: no predictions");
    if (predictions.size() != truths.size()) throw ParameterError("compute_metrics: length mismatch");
    long tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool pred_pos = predictions[i] == positive, true_pos = truths[i] == positive;
        correct += predictions[i] == truths[i];
        tp += pred_pos && true_pos;
        fp += pred_pos && !true_pos;
        fn += !pred_pos && true_pos;
    }
    Metrics m;
    m.acc = static_cast<double>(correct) / static_cast<double>(predictions.size());
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

Metrics evaluate(const Classifier& cls, const std::vector<Example>& examples) {
    std::vector<Tensor> inputs;
    std::vector<int> truths;
    for (const auto& e : examples) {
        inputs.push_back(e.input);
        truths.push_back(e.target);
    }
    std::vector<int> preds;
    for (const auto& p : predict(cls, inputs)) preds.push_back(p.label);
    return compute_metrics(preds, truths, 1);
}

}  // namespace gcan::diag
