#include "gcan/pipeline.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gcan/archive.hpp"
#include "gcan/csv.hpp"
#include "gcan/error.hpp"

namespace gcan::pipeline {

namespace {

namespace pt = boost::property_tree;

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

void require(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw MissingPrerequisiteError(what + " not found at '" + p.string() + "'");
}

std::vector<int> default_planted() {
    std::vector<int> r(10);
    std::iota(r.begin(), r.end(), 40);
    return r;
}

// "40-49,55" -> {40..49, 55}
std::vector<int> parse_region_list(const std::string& text) {
    std::vector<int> out;
    for (auto item : csv::split(text)) {
        item = csv::trim(item);
        if (item.empty()) continue;
        const auto dash = item.find('-', 1);
        const auto lo = csv::parse_int(item.substr(0, dash));
        const auto hi = dash == std::string_view::npos ? lo : csv::parse_int(item.substr(dash + 1));
        if (!lo || !hi || *hi < *lo) throw ConfigError("bad region list item '" + std::string(item) + "'");
        for (long long r = *lo; r <= *hi; ++r) out.push_back(static_cast<int>(r));
    }
    return out;
}

class Reader {
public:
    explicit Reader(const pt::ptree& tree) : tree_(tree) {}

    template <class T>
    void get(const std::string& section, const std::string& key, T& dst) {
        known_.insert(section + "." + key);
        const auto node = tree_.get_child_optional(pt::ptree::path_type(section + "." + key, '.'));
        if (!node) return;
        const std::string raw(csv::trim(node->data()));
        if constexpr (std::is_same_v<T, std::string>) {
            dst = raw;
        } else if constexpr (std::is_same_v<T, double>) {
            const auto v = csv::parse_double(raw);
            if (!v) throw ConfigError(section + "." + key + ": expected a number, got '" + raw + "'");
            dst = *v;
        } else {
            const auto v = csv::parse_int(raw);
            if (!v || (std::is_unsigned_v<T> && *v < 0))
                throw ConfigError(section + "." + key + ": expected an integer, got '" + raw + "'");
            dst = static_cast<T>(*v);
        }
    }

    std::optional<std::string> text(const std::string& section, const std::string& key) {
        std::optional<std::string> s;
        std::string v;
        known_.insert(section + "." + key);
        if (tree_.get_child_optional(pt::ptree::path_type(section + "." + key, '.'))) {
            get(section, key, v);
            s = v;
        }
        return s;
    }

    void reject_unknown() const {
        for (const auto& [section, body] : tree_) {
            if (body.empty() && !body.data().empty())
                throw ConfigError("key '" + section + "' must live inside a [section]");
            for (const auto& [key, value] : body)
                if (known_.count(section + "." + key) == 0)
                    throw ConfigError("unknown config key '" + key + "' in [" + section + "]");
        }
    }

private:
    const pt::ptree& tree_;
    std::set<std::string> known_;
};

void read_train(Reader& r, const std::string& section, diag::TrainConfig& tc) {
    r.get(section, "epochs", tc.epochs);
    r.get(section, "batch_size", tc.batch_size);
    r.get(section, "learning_rate", tc.learning_rate);
    r.get(section, "weight_decay", tc.weight_decay);
    r.get(section, "patience", tc.early_stop_patience);
}

std::string metrics_header() { return "task,model,acc,recall,precision,f1\n"; }

std::string metrics_line(const MetricsRow& row) {
    const auto& m = row.metrics;
    return row.task + "," + row.model + "," + csv::format_fixed(m.acc, 6) + "," + csv::format_fixed(m.recall, 6) + "," +
           csv::format_fixed(m.precision, 6) + "," + csv::format_fixed(m.f1, 6) + "\n";
}

void save_train_history(const diag::TrainResult& r, const fs::path& path) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_acc,val_recall,val_precision,val_f1,best\n";
    for (const auto& e : r.history)
        os << e.epoch << ',' << csv::format_double(e.train_loss) << ',' << csv::format_double(e.val_loss) << ','
           << csv::format_double(e.val.acc) << ',' << csv::format_double(e.val.recall) << ','
           << csv::format_double(e.val.precision) << ',' << csv::format_double(e.val.f1) << ','
           << (e.epoch == r.best_epoch ? 1 : 0) << '\n';
    csv::write_text(path, os.str());
}

void save_checkpoint(const diag::Classifier& cls, bool masked, const fs::path& path) {
    Archive a = cls.to_archive();
    a.meta["input"] = masked ? "masked" : "raw";
    save_archive(a, path);
}

engine::GcanConfig gcan_config(const ExperimentConfig& c, const cf::Direction& d) {
    engine::GcanConfig g = engine::GcanConfig::defaults(c.atlas());
    for (aabt::AabtConfig* a : {&g.generator, &g.discriminator}) {
        a->embed_dim = c.gcan.embed_dim;
        a->num_heads = c.gcan.num_heads;
        a->patch_width = c.gcan.patch_width;
        a->mlp_ratio = c.gcan.mlp_ratio;
    }
    g.generator.depth = c.gcan.generator_depth;
    g.discriminator.depth = c.gcan.discriminator_depth;
    g.combiner = c.gcan.combiner;
    g.noise_sigma = c.gcan.noise_sigma;
    g.steps = c.gcan.steps;
    g.batch_size = c.gcan.batch_size;
    g.generator_lr = c.gcan.generator_lr;
    g.discriminator_lr = c.gcan.discriminator_lr;
    g.seed = derive_seed(c.seed, "gcan." + direction_tag(d));
    return g;
}

diag::Classifier load_pretrained(const Layout& layout) {
    require(layout.pretrain_checkpoint(), "pretrained classifier (run `pretrain` first)");
    return diag::load_classifier(layout.pretrain_checkpoint());
}

cf::AttentionMap load_map(const ExperimentConfig& config, const Layout& layout) {
    require(layout.attention_map(), "attention map (run `attention` first)");
    return cf::load_attention_map(layout.attention_map(), *config.atlas());
}

std::vector<cf::Coord> load_coords(const fs::path& path, int regions) {
    std::vector<cf::Coord> out;
    const auto lines = csv::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (csv::trim(lines[i]).empty()) continue;
        const auto cells = csv::split(lines[i]);
        cf::Coord c{};
        bool ok = cells.size() == 3;
        for (std::size_t k = 0; ok && k < 3; ++k) {
            const auto v = csv::parse_double(cells[k]);
            ok = v.has_value();
            if (ok) c[k] = *v;
        }
        if (!ok) {
            if (out.empty() && i == 0) continue;  // header
            throw ParseError("coordinates: expected `x,y,z`", static_cast<int>(i + 1), 0);
        }
        out.push_back(c);
    }
    if (static_cast<int>(out.size()) != regions)
        throw ShapeError("coordinates: " + std::to_string(out.size()) + " rows for " + std::to_string(regions) + " regions");
    return out;
}

struct ArmResult {
    MetricsRow row;
    diag::Classifier cls;
    diag::TrainResult history;
};

ArmResult train_arm(const Cohort& cohort, const ExperimentConfig& config, const diag::Mask* mask, const std::string& model,
                    std::uint64_t init_seed, std::uint64_t train_seed) {
    diag::Classifier cls(config.classifier, init_seed);
    diag::TrainConfig tc = config.final;
    tc.seed = train_seed;
    auto train = diag::make_examples(cohort, config.task, Split::Train, mask);
    auto val = diag::make_examples(cohort, config.task, Split::Val, mask);
    diag::TrainResult h = diag::train_classifier(cls, train, val, tc);
    const diag::Metrics m = diag::evaluate(cls, diag::make_examples(cohort, config.task, Split::Test, mask));
    return {{config.task.name(), model, m}, std::move(cls), std::move(h)};
}

}  // namespace

// ---- configuration -----------------------------------------------------------

ExperimentConfig::ExperimentConfig() {
    synth.planted_regions = default_planted();
    task = diag::Task::of(Label::HC, Label::MCI);
}

AtlasPtr ExperimentConfig::atlas() const {
    return make_atlas(atlas_path ? load_atlas(*atlas_path) : AtlasPartition::default_partition());
}

SynthSpec ExperimentConfig::synth_spec() const {
    SynthSpec s;
    s.atlas = atlas();
    s.counts = synth.counts;
    s.noise_std = synth.noise_std;
    if (!synth.planted_regions.empty() && synth.planted_delta != 0.0) {
        PlantedBlock b;
        b.reference = synth.planted_reference;
        b.affected = synth.planted_affected;
        b.regions = synth.planted_regions;
        b.delta = synth.planted_delta;
        s.planted = {b};
    }
    s.seed = derive_seed(seed, "cohort");
    return s;
}

void ExperimentConfig::validate() const {
    if (atlas_path) require(*atlas_path, "atlas file");
    if (manifest_path) require(*manifest_path, "cohort manifest");
    if (attention.coords) require(*attention.coords, "node coordinate file");
    const int n = atlas()->total_regions();
    if (classifier.input_size != n)
        throw ConfigError("classifier input size " + std::to_string(classifier.input_size) + " does not match the atlas (" +
                          std::to_string(n) + " regions)");
    classifier.validate();
    pretrain.validate();
    final.validate();
    if (!manifest_path) try {
            synth_spec().validate();
        } catch (const ParameterError& e) {
            throw ConfigError(std::string("cohort: ") + e.what());
        }
    if (attention.k < 1 || attention.k > n) throw ConfigError("attention.k must lie in [1, regions]");
    if (!(attention.floor >= 0.0 && attention.floor <= 1.0)) throw ConfigError("attention.floor must lie in [0, 1]");
    for (const auto& d : directions(task)) gcan_config(*this, d).validate();
    if (out.empty()) throw ConfigError("output directory is empty");
}

ExperimentConfig load_config(const fs::path& path) {
    require(path, "config file");
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    ExperimentConfig c;
    Reader r(tree);
    r.get("experiment", "seed", c.seed);
    if (auto v = r.text("experiment", "out")) c.out = *v;
    if (auto v = r.text("atlas", "path"); v && !v->empty()) c.atlas_path = *v;

    if (auto v = r.text("cohort", "manifest"); v && !v->empty()) c.manifest_path = *v;
    for (Label l : kAllLabels) {
        std::string key(to_string(l));
        std::transform(key.begin(), key.end(), key.begin(), ::tolower);
        int count = c.synth.counts.count(l) ? c.synth.counts[l] : 0;
        r.get("cohort", key, count);
        if (count < 0) throw ConfigError("cohort." + key + " must be non-negative");
        if (count > 0) c.synth.counts[l] = count;
        else c.synth.counts.erase(l);
    }
    r.get("cohort", "noise_std", c.synth.noise_std);
    if (auto v = r.text("cohort", "planted_regions")) c.synth.planted_regions = parse_region_list(*v);
    r.get("cohort", "planted_delta", c.synth.planted_delta);
    if (auto v = r.text("cohort", "planted_reference")) c.synth.planted_reference = parse_label(*v);
    if (auto v = r.text("cohort", "planted_affected")) c.synth.planted_affected = parse_label(*v);

    if (auto v = r.text("task", "labels")) {
        const auto parts = csv::split(*v);
        if (parts.size() != 2) throw ConfigError("task.labels needs two labels, e.g. `HC,MCI`");
        c.task = diag::Task::of(parse_label(csv::trim(parts[0])), parse_label(csv::trim(parts[1])));
    }

    if (auto v = r.text("classifier", "backbone")) c.classifier.backbone = diag::parse_backbone(*v);
    if (auto v = r.text("classifier", "head")) {
        c.classifier.head = diag::parse_head(*v);
        if (c.classifier.head != diag::Head::Transformer) c.classifier.transformer_heads = 0;
    }
    r.get("classifier", "transformer_heads", c.classifier.transformer_heads);
    r.get("classifier", "base_width", c.classifier.base_width);

    read_train(r, "pretrain", c.pretrain);
    read_train(r, "final", c.final);

    r.get("gcan", "steps", c.gcan.steps);
    r.get("gcan", "embed_dim", c.gcan.embed_dim);
    r.get("gcan", "num_heads", c.gcan.num_heads);
    r.get("gcan", "patch_width", c.gcan.patch_width);
    r.get("gcan", "mlp_ratio", c.gcan.mlp_ratio);
    r.get("gcan", "generator_depth", c.gcan.generator_depth);
    r.get("gcan", "discriminator_depth", c.gcan.discriminator_depth);
    r.get("gcan", "batch_size", c.gcan.batch_size);
    r.get("gcan", "generator_lr", c.gcan.generator_lr);
    r.get("gcan", "discriminator_lr", c.gcan.discriminator_lr);
    r.get("gcan", "noise_sigma", c.gcan.noise_sigma);
    if (auto v = r.text("gcan", "combiner")) c.gcan.combiner = engine::parse_combiner_input(*v);

    r.get("attention", "k", c.attention.k);
    r.get("attention", "floor", c.attention.floor);
    if (auto v = r.text("attention", "coords"); v && !v->empty()) c.attention.coords = *v;
    r.reject_unknown();

    // Relative paths resolve against the config file.
    const fs::path base = path.parent_path();
    for (auto* p : {&c.atlas_path, &c.manifest_path, &c.attention.coords})
        if (*p && p->value().is_relative()) *p = base / p->value();
    if (c.out.is_relative()) c.out = base / c.out;
    c.classifier.input_size = c.atlas()->total_regions();
    return c;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view component) {
    // FNV-1a over the component name, mixed with the seed by splitmix64.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : component) h = (h ^ ch) * 1099511628211ULL;
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

fs::path Layout::gcan_checkpoint(const cf::Direction& d) const { return checkpoints() / ("gcan_" + direction_tag(d) + ".ckpt"); }

std::vector<cf::Direction> directions(const diag::Task& task) {
    return {{task.negative, task.positive}, {task.positive, task.negative}};
}

std::string direction_tag(const cf::Direction& d) {
    return std::string(to_string(d.first)) + "-" + std::string(to_string(d.second));
}

Cohort load_experiment_cohort(const ExperimentConfig& config) {
    const fs::path manifest = config.manifest_path ? *config.manifest_path : Layout{config.out}.cohort_dir() / "manifest.csv";
    require(manifest, "cohort manifest (run `synth` first or set cohort.manifest)");
    return load_cohort(manifest, config.atlas());
}

double random_recovery_baseline(int regions, std::span<const int> planted, int k, int draws, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> order(static_cast<std::size_t>(regions));
    const std::set<int> truth(planted.begin(), planted.end());
    double total = 0.0;
    for (int d = 0; d < draws; ++d) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        int hits = 0;
        for (int i = 0; i < k; ++i) hits += truth.count(order[static_cast<std::size_t>(i)]) > 0;
        total += static_cast<double>(hits) / k;
    }
    return total / draws;
}

// ---- commands ----------------------------------------------------------------

Cohort cmd_synth(const ExperimentConfig& config, const Logger& log) {
    config.validate();
    if (config.manifest_path) throw ConfigError("`synth` writes a synthetic cohort; unset cohort.manifest to use it");
    const Layout layout{config.out};
    Cohort cohort = synth_cohort(config.synth_spec());
    fs::remove_all(layout.cohort_dir());
    save_cohort(cohort, layout.cohort_dir());
    save_atlas(cohort.atlas(), layout.cohort_dir() / "atlas.csv");
    say(log, "synth: " + std::to_string(cohort.size()) + " subjects -> " + layout.cohort_dir().string());
    return cohort;
}

MetricsRow cmd_pretrain(const ExperimentConfig& config, const Logger& log) {
    config.validate();
    const Layout layout{config.out};
    const Cohort cohort = load_experiment_cohort(config);
    diag::Classifier cls(config.classifier, derive_seed(config.seed, "pretrain.init"));
    diag::TrainConfig tc = config.pretrain;
    tc.seed = derive_seed(config.seed, "pretrain.train");
    say(log, "pretrain: " + config.classifier.tag() + " on " + config.task.name() + ", " + std::to_string(tc.epochs) + " epochs");
    const diag::TrainResult h = diag::train_classifier(cls, cohort, config.task, nullptr, tc);
    fs::create_directories(layout.checkpoints());
    fs::create_directories(layout.reports());
    save_checkpoint(cls, false, layout.pretrain_checkpoint());
    save_train_history(h, layout.reports() / "pretrain_history.csv");
    const MetricsRow row{config.task.name(), config.classifier.tag(),
                         diag::evaluate(cls, diag::make_examples(cohort, config.task, Split::Test))};
    csv::write_text(layout.reports() / "pretrain_metrics.csv", metrics_header() + metrics_line(row));
    say(log, "pretrain: test f1 " + csv::format_fixed(row.metrics.f1, 4));
    return row;
}

std::vector<engine::TrainHistory> cmd_train_gcan(const ExperimentConfig& config, const Logger& log) {
    config.validate();
    const Layout layout{config.out};
    const Cohort cohort = load_experiment_cohort(config);
    const diag::Classifier cls = load_pretrained(layout);
    const PerceptualExtractor px;
    fs::create_directories(layout.checkpoints());
    fs::create_directories(layout.reports());
    std::vector<engine::TrainHistory> out;
    for (const auto& d : directions(config.task)) {
        const std::string tag = direction_tag(d);
        engine::GcanModel model = engine::make_model(gcan_config(config, d), d.first, d.second);
        say(log, "train-gcan: " + tag + ", " + std::to_string(config.gcan.steps) + " steps");
        const int every = std::max(1, config.gcan.steps / 10);
        engine::TrainHistory h = engine::train_gcan(model, cohort, cls, config.task, px, [&](int step, const engine::LossReport& r) {
            if ((step + 1) % every == 0)
                say(log, "  step " + std::to_string(step + 1) + " L_G " + csv::format_fixed(r.l_G, 4) + " L_D " +
                             csv::format_fixed(r.l_D, 4));
        });
        engine::save_model(model, layout.gcan_checkpoint(d));
        engine::save_history(h, layout.reports() / ("gcan_history_" + tag + ".csv"));
        out.push_back(std::move(h));
    }
    return out;
}

cf::AttentionMap cmd_attention(const ExperimentConfig& config, const Logger& log) {
    config.validate();
    const Layout layout{config.out};
    const Cohort cohort = load_experiment_cohort(config);
    const AtlasPtr atlas = config.atlas();
    std::vector<cf::AttentionMap> maps;
    fs::create_directories(layout.attention());
    for (const auto& d : directions(config.task)) {
        const fs::path ckpt = layout.gcan_checkpoint(d);
        require(ckpt, "GCAN checkpoint (run `train-gcan` first)");
        const engine::GcanModel model = engine::load_model(ckpt, atlas);
        ad::NoGradGuard guard;
        const aabt::FeatureMap tf = engine::target_feature(model, cohort);
        const std::uint64_t base = derive_seed(config.seed, "attention." + direction_tag(d));
        std::vector<cf::SignedDiff> diffs;
        std::uint64_t k = 0;
        for (const Subject* s : cohort.select(d.first, Split::Train)) {
            const engine::Generated g = engine::generate_for(model, s->fc, tf, base + k++);
            diffs.push_back(cf::counterfactual_diff(FcMatrix(atlas, g.c_g_t.to_matrix()), FcMatrix(atlas, g.c_g_s.to_matrix()), d));
        }
        if (diffs.empty()) throw EmptyClassError("no training subjects labeled " + std::string(to_string(d.first)));
        maps.push_back(cf::region_attention(diffs, *atlas));
        cf::save_attention_map(maps.back(), *atlas, layout.attention() / ("map_" + direction_tag(d) + ".csv"));
    }
    const cf::AttentionMap map = cf::aggregate(maps);
    cf::save_attention_map(map, *atlas, layout.attention_map());

    const auto coords = config.attention.coords ? load_coords(*config.attention.coords, atlas->total_regions())
                                                : cf::default_coords(atlas->total_regions());
    cf::export_nodes(map, coords, *atlas, layout.attention() / "nodes.node");

    std::ostringstream rank;
    rank << "view,rank,region_index,network,weight\n";
    for (auto [view, name] : {std::pair{cf::View::Combined, "combined"}, std::pair{cf::View::Positive, "positive"},
                              std::pair{cf::View::Negative, "negative"}}) {
        int i = 1;
        for (const auto& r : cf::top_regions(map, config.attention.k, *atlas, view))
            rank << name << ',' << i++ << ',' << r.region << ',' << r.network << ',' << csv::format_double(r.weight) << '\n';
    }
    csv::write_text(layout.attention() / "ranking.csv", rank.str());

    if (!config.manifest_path && !config.synth_spec().planted.empty()) {
        const auto& planted = config.synth.planted_regions;
        const double rec = cf::recovery_score(map, planted, config.attention.k);
        const double base = random_recovery_baseline(atlas->total_regions(), planted, config.attention.k, 10000,
                                                     derive_seed(config.seed, "baseline"));
        fs::create_directories(layout.reports());
        csv::write_text(layout.reports() / "recovery.csv", "k,recovery,random_baseline\n" + std::to_string(config.attention.k) +
                                                              "," + csv::format_fixed(rec, 6) + "," + csv::format_fixed(base, 6) + "\n");
        say(log, "attention: recovery@" + std::to_string(config.attention.k) + " " + csv::format_fixed(rec, 3) +
                     " (random " + csv::format_fixed(base, 3) + ")");
    }
    return map;
}

MetricsRow cmd_train_final(const ExperimentConfig& config, const Logger& log) {
    config.validate();
    const Layout layout{config.out};
    const cf::AttentionMap map = load_map(config, layout);
    const Cohort cohort = load_experiment_cohort(config);
    const diag::Mask mask{map, config.attention.floor};
    say(log, "train-final: " + config.classifier.tag() + " on masked FC");
    ArmResult arm = train_arm(cohort, config, &mask, "proposed", derive_seed(config.seed, "final.init"),
                              derive_seed(config.seed, "final.train"));
    fs::create_directories(layout.checkpoints());
    fs::create_directories(layout.reports());
    save_checkpoint(arm.cls, true, layout.final_checkpoint());
    save_train_history(arm.history, layout.reports() / "final_history.csv");
    csv::write_text(layout.reports() / "final_metrics.csv", metrics_header() + metrics_line(arm.row));
    say(log, "train-final: test f1 " + csv::format_fixed(arm.row.metrics.f1, 4));
    return arm.row;
}

MetricsRow cmd_evaluate(const ExperimentConfig& config, const std::optional<fs::path>& checkpoint, const Logger& log) {
    config.validate();
    const Layout layout{config.out};
    const fs::path ckpt = checkpoint ? *checkpoint : layout.final_checkpoint();
    require(ckpt, "classifier checkpoint");
    const Archive archive = load_archive(ckpt);
    const diag::Classifier cls = diag::Classifier::from_archive(archive);
    const bool masked = archive.meta.count("input") && archive.meta_value("input") == "masked";
    const Cohort cohort = load_experiment_cohort(config);
    std::optional<diag::Mask> mask;
    if (masked) mask = diag::Mask{load_map(config, layout), config.attention.floor};
    const auto examples = diag::make_examples(cohort, config.task, Split::Test, mask ? &*mask : nullptr);
    const MetricsRow row{config.task.name(), masked ? "proposed" : cls.config().tag(), diag::evaluate(cls, examples)};

    // Rows are keyed by (task, model): a rerun replaces its own row.
    fs::create_directories(layout.reports());
    const fs::path report = layout.reports() / "evaluation.csv";
    std::vector<std::string> rows;
    if (fs::exists(report)) {
        const auto lines = csv::read_lines(report);
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (csv::trim(lines[i]).empty()) continue;
            const auto cells = csv::split(lines[i]);
            if (cells.size() >= 2 && cells[0] == row.task && cells[1] == row.model) continue;
            rows.push_back(lines[i] + "\n");
        }
    }
    rows.push_back(metrics_line(row));
    std::string text = metrics_header();
    for (const auto& r : rows) text += r;
    csv::write_text(report, text);
    say(log, "evaluate: " + row.model + " f1 " + csv::format_fixed(row.metrics.f1, 4));
    return row;
}

AblationReport cmd_ablate(const ExperimentConfig& config, const Logger& log) {
    config.validate();
    const Layout layout{config.out};
    const cf::AttentionMap map = load_map(config, layout);
    const Cohort cohort = load_experiment_cohort(config);
    const diag::Mask mask{map, config.attention.floor};
    const std::uint64_t init = derive_seed(config.seed, "final.init"), train = derive_seed(config.seed, "final.train");
    say(log, "ablate: unmasked arm");
    const ArmResult raw = train_arm(cohort, config, nullptr, config.classifier.tag(), init, train);
    say(log, "ablate: masked arm");
    const ArmResult masked = train_arm(cohort, config, &mask, config.classifier.tag(), init, train);

    const AblationReport rep{raw.row, masked.row, config.seed};
    std::ostringstream os;
    os << "task,model,mask,seed,acc,recall,precision,f1\n";
    auto line = [&](const std::string& tag, const diag::Metrics& m) {
        os << config.task.name() << ',' << config.classifier.tag() << ',' << tag << ',' << config.seed << ','
           << csv::format_fixed(m.acc, 6) << ',' << csv::format_fixed(m.recall, 6) << ',' << csv::format_fixed(m.precision, 6)
           << ',' << csv::format_fixed(m.f1, 6) << '\n';
    };
    line("no", raw.row.metrics);
    line("yes", masked.row.metrics);
    const diag::Metrics& a = raw.row.metrics;
    const diag::Metrics& b = masked.row.metrics;
    line("delta", {b.acc - a.acc, b.recall - a.recall, b.precision - a.precision, b.f1 - a.f1});
    fs::create_directories(layout.reports());
    csv::write_text(layout.reports() / "ablation.csv", os.str());
    say(log, "ablate: f1 unmasked " + csv::format_fixed(a.f1, 4) + ", masked " + csv::format_fixed(b.f1, 4));
    return rep;
}

}  // namespace gcan::pipeline
