#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "gcan/csv.hpp"
#include "gcan/error.hpp"
#include "gcan/pipeline.hpp"

using namespace gcan;
using namespace gcan::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path dir = fs::temp_directory_path() / "gcan_test_pipeline";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    csv::write_text(p, text);
    return p;
}

}  // namespace

TEST_CASE("an empty config gives the desk-scale defaults") {
    const ExperimentConfig c = load_config(write_config("empty.ini", "; nothing\n"));
    CHECK(c.seed == 0);
    CHECK(c.atlas()->total_regions() == 160);
    CHECK(c.synth.counts.at(Label::HC) == 60);
    CHECK(c.synth.counts.at(Label::MCI) == 60);
    CHECK(c.synth.planted_regions == std::vector<int>{40, 41, 42, 43, 44, 45, 46, 47, 48, 49});
    CHECK(c.synth.planted_delta == 0.3);
    CHECK(c.gcan.steps == 200);
    CHECK(c.attention.k == 10);
    CHECK(c.classifier.input_size == 160);
    CHECK(c.out == c.out.parent_path() / "run");
}

TEST_CASE("config values, ranges and relative paths") {
    csv::write_text(write_config("atlas.csv", "").parent_path() / "atlas.csv", "network,region_count\nAA,6\nBB,10\n");
    const fs::path p = write_config("set.ini",
                                    "[experiment]\nseed = 12\nout = out_dir\n[atlas]\npath = atlas.csv\n"
                                    "[cohort]\nhc = 5\nmci = 7\nplanted_regions = 1, 4-6\n[gcan]\ncombiner = target\n"
                                    "[classifier]\nhead = channel_attention\ntransformer_heads = 0\n");
    const ExperimentConfig c = load_config(p);
    CHECK(c.seed == 12);
    CHECK(c.out == p.parent_path() / "out_dir");
    CHECK(c.atlas_path == p.parent_path() / "atlas.csv");
    CHECK(c.atlas()->total_regions() == 16);
    CHECK(c.synth.planted_regions == std::vector<int>{1, 4, 5, 6});
    CHECK(c.synth.counts.at(Label::MCI) == 7);
    CHECK(c.gcan.combiner == engine::CombinerInput::Target);
    CHECK(c.classifier.head == diag::Head::ChannelAttention);
}

TEST_CASE("bad configs are config errors") {
    CHECK_THROWS_AS(load_config(write_config("unknown.ini", "[gcan]\nstepz = 3\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_config("section.ini", "[gan]\nsteps = 3\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_config("value.ini", "[gcan]\nsteps = many\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_config("head.ini", "[classifier]\nhead = channel\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_config("syntax.ini", "[gcan\nsteps = 3\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_config("delta.ini", "[cohort]\nplanted_delta = 0.9\n")).validate(), ConfigError);
    CHECK_THROWS(load_config(write_config("missing_atlas.ini", "[atlas]\npath = nowhere.csv\n")));
}

TEST_CASE("derived seeds are stable and separate components") {
    CHECK(derive_seed(3, "cohort") == derive_seed(3, "cohort"));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s : {0ULL, 1ULL, 2ULL})
        for (const char* c : {"cohort", "pretrain.init", "pretrain.train", "final.init", "gcan.HC-MCI", "gcan.MCI-HC"})
            seen.insert(derive_seed(s, c));
    CHECK(seen.size() == 18);
}

TEST_CASE("task directions and tags") {
    const auto d = directions(diag::Task::of(Label::HC, Label::MCI));
    REQUIRE(d.size() == 2);
    CHECK(direction_tag(d[0]) == "HC-MCI");
    CHECK(direction_tag(d[1]) == "MCI-HC");
}

TEST_CASE("random recovery baseline matches the hypergeometric mean") {
    // E[|top-k ∩ P|] / k = |P| / N for a uniformly random ranking.
    const std::vector<int> planted{40, 41, 42, 43, 44, 45, 46, 47, 48, 49};
    const double b = random_recovery_baseline(160, planted, 10, 10000, 7);
    CHECK(b == doctest::Approx(10.0 / 160.0).epsilon(0.1));
    CHECK(random_recovery_baseline(160, planted, 10, 10000, 7) == b);
    const std::vector<int> all{0, 1, 2, 3};
    CHECK(random_recovery_baseline(4, all, 2, 100, 1) == 1.0);
}

TEST_CASE("commands report missing prerequisites") {
    ExperimentConfig c;
    c.out = fs::temp_directory_path() / "gcan_test_pipeline" / "never_run";
    fs::remove_all(c.out);
    CHECK_THROWS_AS(cmd_pretrain(c), MissingPrerequisiteError);
    CHECK_THROWS_AS(cmd_attention(c), MissingPrerequisiteError);
    CHECK_THROWS_AS(cmd_evaluate(c), MissingPrerequisiteError);
}
