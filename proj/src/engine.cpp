#include "gcan/engine.hpp"

#include <algorithm>
#include <charconv>
#include <optional>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gcan/csv.hpp"
#include "gcan/error.hpp"
#include "gcan/optim.hpp"

namespace gcan::engine {

namespace {

Tensor clamped_log(const Tensor& p) { return ad::log(ad::clamp(p, kLogEps, 1.0)); }

void write_aabt_meta(Archive& a, const std::string& prefix, const aabt::AabtConfig& c) {
    a.meta[prefix + ".depth"] = std::to_string(c.depth);
    a.meta[prefix + ".embed_dim"] = std::to_string(c.embed_dim);
    a.meta[prefix + ".num_heads"] = std::to_string(c.num_heads);
    a.meta[prefix + ".patch_width"] = std::to_string(c.patch_width);
    a.meta[prefix + ".mlp_ratio"] = csv::format_double(c.mlp_ratio);
}

aabt::AabtConfig read_aabt_meta(const Archive& a, const std::string& prefix, AtlasPtr atlas) {
    auto get_int = [&](const std::string& key) {
        const auto v = csv::parse_int(a.meta_value(prefix + "." + key));
        if (!v) throw ParseError("GCAN archive: bad '" + prefix + "." + key + "'", 0, 0);
        return static_cast<int>(*v);
    };
    aabt::AabtConfig c;
    c.depth = get_int("depth");
    c.embed_dim = get_int("embed_dim");
    c.num_heads = get_int("num_heads");
    c.patch_width = get_int("patch_width");
    const auto ratio = csv::parse_double(a.meta_value(prefix + ".mlp_ratio"));
    if (!ratio) throw ParseError("GCAN archive: bad mlp_ratio", 0, 0);
    c.mlp_ratio = *ratio;
    c.atlas = std::move(atlas);
    return c;
}

void check_report(const LossReport& r, int step) {
    if (r.finite() && r.max_abs() <= kDivergenceLimit) return;
    std::ostringstream os;
    os << "GCAN training diverged at step " << step << ": l_p=" << r.l_p << " l_gen=" << r.l_gen << " l_c=" << r.l_c
       << " l_dc=" << r.l_dc << " l_dsl=" << r.l_dsl << " l_dtl=" << r.l_dtl << " l_dD=" << r.l_dD;
    throw DivergenceError(os.str());
}

}  // namespace

GcanConfig GcanConfig::defaults(AtlasPtr atlas) {
    GcanConfig c;
    c.generator.atlas = atlas;
    c.generator.depth = 3;
    c.discriminator.atlas = atlas;
    c.discriminator.depth = 8;
    return c;
}

void GcanConfig::validate() const {
    generator.validate();
    discriminator.validate();
    if (!(*generator.atlas == *discriminator.atlas)) throw ConfigError("generator and discriminators need the same atlas");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(generator_lr > 0.0) || !(discriminator_lr > 0.0)) throw ConfigError("learning rates must be positive");
}

// ---- generator ---------------------------------------------------------------

std::string_view to_string(CombinerInput c) { return c == CombinerInput::Target ? "target" : "offset"; }

CombinerInput parse_combiner_input(std::string_view s) {
    if (s == "target") return CombinerInput::Target;
    if (s == "offset") return CombinerInput::Offset;
    throw ConfigError("unknown combiner input '" + std::string(s) + "' (expected target or offset)");
}

Generator::Generator(const aabt::AabtConfig& config, CombinerInput input, nn::Rng& rng)
    : encoder_(config, rng), input_(input), combiner_(config.embed_dim, config.embed_dim, rng), decoder_(config, true, rng) {
    if (input_ == CombinerInput::Offset) {
        auto w = combiner_.weight.mutable_values();
        std::fill(w.begin(), w.end(), 0.0);
        for (int i = 0; i < config.embed_dim; ++i) w[static_cast<std::size_t>(i) * config.embed_dim + i] = 1.0;
    }
}

aabt::FeatureMap Generator::combine(const aabt::FeatureMap& target, const aabt::FeatureMap& z) const {
    if (target.tokens.size() != z.tokens.size())
        throw ShapeError("combine: target feature map has the wrong network count");
    aabt::FeatureMap out = target;
    for (std::size_t i = 0; i < out.tokens.size(); ++i) {
        const Tensor in = input_ == CombinerInput::Offset ? ad::sub(target.tokens[i], z.tokens[i]) : target.tokens[i];
        out.tokens[i] = combiner_.forward(in);
    }
    return out;
}

nn::ParamList Generator::params() const {
    nn::ParamList out;
    encoder_.collect(out, "encoder");
    combiner_.collect(out, "combiner");
    decoder_.collect(out, "decoder");
    return out;
}

void Generator::zero_combiner() {
    for (Tensor t : {combiner_.weight, combiner_.bias}) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
}

Generated generate(const Tensor& c_n_s, const aabt::FeatureMap& target_feature, const Generator& gen) {
    const aabt::FeatureMap z = gen.encode(c_n_s);
    const aabt::FeatureMap offset = gen.combine(target_feature, z);
    aabt::FeatureMap shifted = z;
    for (std::size_t i = 0; i < z.tokens.size(); ++i) shifted.tokens[i] = ad::add(z.tokens[i], offset.tokens[i]);
    return {gen.decode(z), gen.decode(shifted)};
}

// ---- discriminators ---------------------------------------------------------

Discriminator::Discriminator(const aabt::AabtConfig& config, nn::Rng& rng)
    : image_(config, rng), image_out_(config.embed_dim, 1, rng), neuro_(config, false, rng) {}

Tensor Discriminator::image_logits(const Tensor& fc) const {
    return image_out_.forward(image_.encode(fc).concatenated());
}

nn::ParamList Discriminator::params() const {
    nn::ParamList out;
    image_.collect(out, "image");
    image_out_.collect(out, "image.out");
    neuro_.collect(out, "neuro");
    return out;
}

// ---- losses --------------------------------------------------------------------

bool LossReport::finite() const {
    for (double v : {l_p, l_gen, l_c, l_G, l_dc, l_dsl, l_dtl, l_dD, l_D})
        if (!std::isfinite(v)) return false;
    return true;
}

double LossReport::max_abs() const {
    double m = 0.0;
    for (double v : {l_p, l_gen, l_c, l_G, l_dc, l_dsl, l_dtl, l_dD, l_D}) m = std::max(m, std::abs(v));
    return m;
}

Tensor recon_loss(const Tensor& c_g_s, const Tensor& c_r_s) { return ad::mse(c_g_s, c_r_s); }

Tensor label_ce_loss(const Tensor& c_g_t, int target_class, const diag::Classifier& cls) {
    return ad::cross_entropy(cls.forward(c_g_t), target_class);
}

Tensor disc_image_loss(const Tensor& logits_generated, const Tensor& logits_real) {
    if (logits_generated.shape() != logits_real.shape()) throw ShapeError("disc_image_loss: shape mismatch");
    const Tensor fake = clamped_log(ad::sigmoid(ad::scale(logits_generated, -1.0)));  // log[1 - S(a)]
    const Tensor real = clamped_log(ad::sigmoid(logits_real));
    return ad::mean(ad::mul(fake, real));
}

Tensor disc_divergence_loss(const Tensor& logits_source, const Tensor& logits_target) {
    if (logits_source.shape() != logits_target.shape()) throw ShapeError("disc_divergence_loss: shape mismatch");
    const Tensor a = clamped_log(ad::sigmoid(ad::scale(logits_source, -1.0)));
    const Tensor b = clamped_log(ad::sigmoid(ad::scale(logits_target, -1.0)));
    return ad::mean(ad::mul(a, b));
}

std::pair<Tensor, Tensor> disc_label_losses(const Tensor& c_g_s, const Tensor& c_g_t, int source_class, int target_class,
                                            const Discriminator& d, const diag::Classifier& cls) {
    return {ad::cross_entropy(cls.forward(d.neuro_map(c_g_s)), source_class),
            ad::cross_entropy(cls.forward(d.neuro_map(c_g_t)), target_class)};
}

GeneratorTerms generator_terms(const Generator& gen, const Tensor& c_n_s, const Tensor& c_r_s,
                               const aabt::FeatureMap& target_feature, const diag::Classifier& cls, int target_class,
                               const PerceptualExtractor& px) {
    const Generated g = generate(c_n_s, target_feature, gen);
    return {perceptual_loss(g.c_g_s, c_r_s, px), recon_loss(g.c_g_s, c_r_s), label_ce_loss(g.c_g_t, target_class, cls)};
}

DiscriminatorTerms discriminator_terms(const Discriminator& d, const Generated& g, const Tensor& c_r_s,
                                       const diag::Classifier& cls, int source_class, int target_class) {
    const Tensor logits_gs = d.image_logits(g.c_g_s);
    auto [l_dsl, l_dtl] = disc_label_losses(g.c_g_s, g.c_g_t, source_class, target_class, d, cls);
    return {disc_image_loss(logits_gs, d.image_logits(c_r_s)), std::move(l_dsl), std::move(l_dtl),
            disc_divergence_loss(logits_gs, d.image_logits(g.c_g_t))};
}

double generator_loss(const LossReport& r) { return r.l_p + r.l_c + r.l_gen; }

double discriminator_loss(const LossReport& r) { return r.l_dc + r.l_dsl + r.l_dtl + r.l_dD; }

// ---- model and training ----------------------------------------------------------

GcanModel make_model(const GcanConfig& config, Label source, Label target) {
    config.validate();
    if (source == target) throw ConfigError("GCAN source and target labels must differ");
    nn::Rng rng(config.seed);
    GcanModel m;
    m.config = config;
    m.generator = Generator(config.generator, config.combiner, rng);
    m.discriminator = Discriminator(config.discriminator, rng);
    m.source = source;
    m.target = target;
    return m;
}

aabt::FeatureMap target_feature(const GcanModel& model, const Cohort& cohort) {
    const FcMatrix mean = mean_fc(cohort, model.target, Split::Train);
    return model.generator.encode(Tensor::from_matrix(mean.values()));
}

Generated generate_for(const GcanModel& model, const FcMatrix& source_fc, const aabt::FeatureMap& target_feature,
                       std::uint64_t noise_seed) {
    ad::NoGradGuard guard;
    const Tensor c_n_s = Tensor::from_matrix(add_noise(source_fc, model.config.noise_sigma, noise_seed));
    return generate(c_n_s, target_feature, model.generator);
}

TrainHistory train_gcan(GcanModel& model, const Cohort& cohort, const diag::Classifier& cls, const diag::Task& task,
                        const PerceptualExtractor& px, const StepCallback& on_step) {
    const GcanConfig& cfg = model.config;
    const auto sources = cohort.select(model.source, Split::Train);
    if (sources.empty())
        throw EmptyClassError("no training subjects labeled " + std::string(to_string(model.source)));
    const Tensor c_r_t = Tensor::from_matrix(mean_fc(cohort, model.target, Split::Train).values());
    const int y_s = task.class_of(model.source), y_t = task.class_of(model.target);

    const nn::ParamList cls_params = cls.params();
    nn::set_trainable(cls_params, false);
    const nn::ParamList gen_params = model.generator.params();
    const nn::ParamList disc_params = model.discriminator.params();
    nn::set_trainable(gen_params, true);
    nn::set_trainable(disc_params, true);
    optim::Adam adam_g(nn::tensors(gen_params), {cfg.generator_lr});
    optim::Adam adam_d(nn::tensors(disc_params), {cfg.discriminator_lr});

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(sources.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    TrainHistory history;
    const double inv_batch = 1.0 / cfg.batch_size;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> real, noisy;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const Subject& s = *sources[order[cursor++]];
            real.push_back(Tensor::from_matrix(s.fc.values()));
            noisy.push_back(Tensor::from_matrix(add_noise(s.fc, cfg.noise_sigma, rng())));
        }
        LossReport r;

        // Discriminator step, generator frozen.
        std::vector<Generated> fixed;
        {
            ad::NoGradGuard guard;
            const aabt::FeatureMap tf = model.generator.encode(c_r_t);
            for (const Tensor& x : noisy) fixed.push_back(generate(x, tf, model.generator));
        }
        adam_d.zero_grad();
        {
            Tensor total = Tensor::scalar(0.0);
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto i = static_cast<std::size_t>(b);
                const DiscriminatorTerms t = discriminator_terms(model.discriminator, fixed[i], real[i], cls, y_s, y_t);
                r.l_dc += t.l_dc.item() * inv_batch;
                r.l_dsl += t.l_dsl.item() * inv_batch;
                r.l_dtl += t.l_dtl.item() * inv_batch;
                r.l_dD += t.l_dD.item() * inv_batch;
                total = ad::add(total, t.total());
            }
            ad::scale(total, inv_batch).backward();
        }
        r.l_D = discriminator_loss(r);
        check_report(r, step);
        adam_d.step();

        // Generator step, discriminators frozen (L_G does not involve them).
        adam_g.zero_grad();
        {
            const aabt::FeatureMap tf = model.generator.encode(c_r_t);
            Tensor total = Tensor::scalar(0.0);
            for (int b = 0; b < cfg.batch_size; ++b) {
                const auto i = static_cast<std::size_t>(b);
                const GeneratorTerms t = generator_terms(model.generator, noisy[i], real[i], tf, cls, y_t, px);
                r.l_p += t.l_p.item() * inv_batch;
                r.l_gen += t.l_gen.item() * inv_batch;
                r.l_c += t.l_c.item() * inv_batch;
                total = ad::add(total, t.total());
            }
            ad::scale(total, inv_batch).backward();
        }
        r.l_G = generator_loss(r);
        check_report(r, step);
        adam_g.step();

        history.steps.push_back(r);
        if (on_step) on_step(step, r);
    }
    adam_g.zero_grad();
    adam_d.zero_grad();
    return history;
}

// ---- persistence ---------------------------------------------------------------

void save_model(const GcanModel& model, const std::filesystem::path& path) {
    Archive a;
    a.meta["kind"] = "gcan";
    a.meta["source"] = std::string(to_string(model.source));
    a.meta["target"] = std::string(to_string(model.target));
    a.meta["combiner"] = std::string(to_string(model.config.combiner));
    a.meta["noise_sigma"] = csv::format_double(model.config.noise_sigma);
    a.meta["seed"] = std::to_string(model.config.seed);
    write_aabt_meta(a, "generator", model.config.generator);
    write_aabt_meta(a, "discriminator", model.config.discriminator);
    append_params(a, model.generator.params(), "generator");
    append_params(a, model.discriminator.params(), "discriminator");
    save_archive(a, path);
}

GcanModel load_model(const std::filesystem::path& path, AtlasPtr atlas) {
    const Archive a = load_archive(path);
    if (a.meta.count("kind") == 0 || a.meta_value("kind") != "gcan")
        throw ParseError("'" + path.string() + "' does not hold a GCAN model", 0, 0);
    GcanConfig c;
    c.generator = read_aabt_meta(a, "generator", atlas);
    c.discriminator = read_aabt_meta(a, "discriminator", atlas);
    const auto sigma = csv::parse_double(a.meta_value("noise_sigma"));
    std::optional<std::uint64_t> seed;
    {
        const std::string& text = a.meta_value("seed");
        std::uint64_t v = 0;
        const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec == std::errc() && end == text.data() + text.size()) seed = v;
    }
    if (!sigma || !seed) throw ParseError("GCAN archive: bad noise_sigma or seed", 0, 0);
    c.noise_sigma = *sigma;
    c.combiner = parse_combiner_input(a.meta_value("combiner"));
    c.seed = static_cast<std::uint64_t>(*seed);
    GcanModel m = make_model(c, parse_label(a.meta_value("source")), parse_label(a.meta_value("target")));
    restore_params(a, m.generator.params(), "generator");
    restore_params(a, m.discriminator.params(), "discriminator");
    return m;
}

void save_history(const TrainHistory& history, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "step,l_p,l_gen,l_c,l_G,l_dc,l_dsl,l_dtl,l_dD,l_D\n";
    for (std::size_t i = 0; i < history.steps.size(); ++i) {
        const LossReport& r = history.steps[i];
        os << i;
        for (double v : {r.l_p, r.l_gen, r.l_c, r.l_G, r.l_dc, r.l_dsl, r.l_dtl, r.l_dD, r.l_D}) os << ',' << csv::format_double(v);
        os << '\n';
    }
    csv::write_text(path, os.str());
}

}  // namespace gcan::engine
