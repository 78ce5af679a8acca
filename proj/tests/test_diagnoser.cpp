#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gcan/diagnoser.hpp"
#include "gcan/error.hpp"
#include "gcan/synth.hpp"

using namespace gcan;
using namespace gcan::diag;
namespace fs = std::filesystem;

namespace {

struct Confusion {
    int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Reference metrics straight from the confusion table; 0 on a zero denominator.
Metrics reference_metrics(const std::vector<int>& pred, const std::vector<int>& truth, int positive) {
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == positive, t = truth[i] == positive;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
    Metrics m;
    m.acc = ratio(c.tp + c.tn, static_cast<double>(pred.size()));
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.f1 = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

ClassifierConfig small_config(Head head = Head::Transformer, Backbone b = Backbone::R10) {
    ClassifierConfig c;
    c.backbone = b;
    c.head = head;
    c.transformer_heads = head == Head::Transformer ? 8 : 0;
    c.input_size = 32;
    return c;
}

Tensor random_input(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (double& x : v) x = d(rng);
    return Tensor::constant({n, n}, std::move(v));
}

Cohort separable_cohort(std::uint64_t seed) {
    SynthSpec s;
    s.atlas = make_atlas(AtlasPartition({{"AA", 12}, {"BB", 20}}));
    s.counts = {{Label::HC, 30}, {Label::MCI, 30}};
    PlantedBlock b;
    b.reference = Label::HC;
    b.affected = Label::MCI;
    b.regions = {3, 4, 5, 6, 20, 21};
    b.delta = 0.4;
    s.planted = {b};
    s.seed = seed;
    return synth_cohort(s);
}

std::vector<double> logits(const Classifier& cls, const Tensor& x) {
    const Tensor y = cls.forward(x);
    return {y.values().begin(), y.values().end()};
}

fs::path temp_file(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("gcan_test_diag_" + name);
    fs::remove(p);
    return p;
}

}  // namespace

TEST_CASE("metrics agree with a confusion-matrix reference on random cases") {
    std::mt19937_64 rng(42);
    for (int t = 0; t < 1000; ++t) {
        const int n = 1 + static_cast<int>(rng() % 12);
        std::vector<int> pred(n), truth(n);
        const int mode = t % 4;  // all-negative and all-positive runs hit the zero divisions
        for (int i = 0; i < n; ++i) {
            pred[i] = mode == 0 ? 0 : mode == 1 ? 1 : static_cast<int>(rng() % 2);
            truth[i] = mode == 2 ? 0 : static_cast<int>(rng() % 2);
        }
        const int positive = static_cast<int>(rng() % 2);
        const Metrics got = compute_metrics(pred, truth, positive);
        const Metrics want = reference_metrics(pred, truth, positive);
        CHECK(got.acc == want.acc);
        CHECK(got.recall == want.recall);
        CHECK(got.precision == want.precision);
        CHECK(got.f1 == want.f1);
    }
}

TEST_CASE("metrics on a hand example") {
    const std::vector<int> pred{1, 1, 0, 0}, truth{1, 0, 0, 0};
    const Metrics m = compute_metrics(pred, truth, 1);
    CHECK(m.acc == doctest::Approx(0.75));
    CHECK(m.precision == doctest::Approx(0.5));
    CHECK(m.recall == doctest::Approx(1.0));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(compute_metrics(pred, std::vector<int>{1}, 1), ParameterError);
    CHECK_THROWS_AS(compute_metrics(std::vector<int>{}, std::vector<int>{}, 1), ParameterError);
}

TEST_CASE("prediction ties go to the lower class and logits are shift invariant") {
    const std::vector<double> tie{0.3, 0.3};
    const Prediction p = predict_logits(tie);
    CHECK(p.label == 0);
    CHECK(p.probabilities[0] == doctest::Approx(0.5));
    const std::vector<double> a{1.0, 2.5}, b{101.0, 102.5};
    const Prediction pa = predict_logits(a), pb = predict_logits(b);
    CHECK(pa.label == 1);
    CHECK(pa.probabilities[1] == doctest::Approx(pb.probabilities[1]).epsilon(1e-12));
    CHECK(pa.probabilities[0] + pa.probabilities[1] == doctest::Approx(1.0));
}

TEST_CASE("config validation and tags") {
    CHECK(ClassifierConfig{}.tag() == "RT-B10");
    ClassifierConfig c;
    c.head = Head::None;
    c.transformer_heads = 0;
    c.backbone = Backbone::R18;
    CHECK(c.tag() == "R//18");
    c.head = Head::ChannelAttention;
    c.backbone = Backbone::R10;
    CHECK(c.tag() == "RA10");
    c.transformer_heads = 8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(parse_backbone("R50"), ConfigError);
    CHECK(parse_head(to_string(Head::Transformer)) == Head::Transformer);
}

TEST_CASE("every head produces logits and R18 is larger than R10") {
    std::mt19937_64 rng(1);
    const Tensor x = random_input(32, rng);
    for (Head h : {Head::None, Head::ChannelAttention, Head::Transformer}) {
        const Classifier cls(small_config(h), 3);
        const Tensor y = cls.forward(x);
        REQUIRE(y.numel() == 2);
        for (double v : y.values()) CHECK(std::isfinite(v));
    }
    auto count = [](const Classifier& c) {
        std::size_t n = 0;
        for (const auto& p : c.params()) n += p.tensor.numel();
        return n;
    };
    CHECK(count(Classifier(small_config(Head::None, Backbone::R18), 0)) >
          count(Classifier(small_config(Head::None, Backbone::R10), 0)));
    CHECK_THROWS(Classifier(small_config(), 0).forward(random_input(16, rng)));
}

TEST_CASE("construction is deterministic in the seed") {
    std::mt19937_64 rng(2);
    const Tensor x = random_input(32, rng);
    CHECK(logits(Classifier(small_config(), 9), x) == logits(Classifier(small_config(), 9), x));
    CHECK(logits(Classifier(small_config(), 9), x) != logits(Classifier(small_config(), 10), x));
}

TEST_CASE("checkpoint round trip reproduces logits exactly") {
    std::mt19937_64 rng(4);
    const Tensor x = random_input(32, rng);
    const Classifier cls(small_config(Head::ChannelAttention, Backbone::R18), 5);
    const fs::path p = temp_file("cls.ckpt");
    save_classifier(cls, p);
    const Classifier back = load_classifier(p);
    CHECK(back.config().tag() == cls.config().tag());
    CHECK(logits(cls, x) == logits(back, x));
}

TEST_CASE("task ordering puts the later stage at class 1") {
    const Task t = Task::of(Label::MCI, Label::HC);
    CHECK(t.negative == Label::HC);
    CHECK(t.positive == Label::MCI);
    CHECK(t.name() == "HC-vs-MCI");
    CHECK(t.class_of(Label::MCI) == 1);
    CHECK(t.label_of(0) == Label::HC);
    CHECK_THROWS(t.class_of(Label::SCD));
}

TEST_CASE("zero epochs leave the classifier untouched") {
    const Cohort cohort = separable_cohort(1);
    Classifier cls(small_config(), 7);
    const auto before = cls.params().front().tensor.values();
    std::vector<double> snapshot(before.begin(), before.end());
    TrainConfig tc;
    tc.epochs = 0;
    const TrainResult r = train_classifier(cls, cohort, Task::of(Label::HC, Label::MCI), nullptr, tc);
    CHECK(r.history.empty());
    CHECK(r.best_epoch == -1);
    const auto after = cls.params().front().tensor.values();
    CHECK(std::equal(after.begin(), after.end(), snapshot.begin()));
}

TEST_CASE("training separates a planted cohort and is deterministic") {
    const Cohort cohort = separable_cohort(3);
    const Task task = Task::of(Label::HC, Label::MCI);
    TrainConfig tc;
    tc.epochs = 8;
    tc.learning_rate = 1e-3;
    tc.seed = 11;
    Classifier a(small_config(), 1), b(small_config(), 1);
    const TrainResult ra = train_classifier(a, cohort, task, nullptr, tc);
    const TrainResult rb = train_classifier(b, cohort, task, nullptr, tc);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    const auto train = make_examples(cohort, task, Split::Train);
    const auto test = make_examples(cohort, task, Split::Test);
    CHECK(evaluate(a, train).acc >= 0.95);
    CHECK(evaluate(a, test).acc >= 0.8);
}

TEST_CASE("masked examples use the attention map") {
    const Cohort cohort = separable_cohort(5);
    const Task task = Task::of(Label::HC, Label::MCI);
    Mask mask;
    mask.map.region_weights.assign(32, 0.0);
    mask.map.positive.assign(32, 0.0);
    mask.map.negative.assign(32, 0.0);
    mask.floor = 0.5;
    const auto plain = make_examples(cohort, task, Split::Val);
    const auto masked = make_examples(cohort, task, Split::Val, &mask);
    REQUIRE(plain.size() == masked.size());
    const auto p = plain.front().input.values();
    const auto m = masked.front().input.values();
    CHECK(m[1] == doctest::Approx(0.5 * p[1]));
    CHECK(m[0] == 1.0);
    CHECK(plain.front().id == masked.front().id);
}
