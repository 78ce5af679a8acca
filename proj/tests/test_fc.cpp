#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gcan/csv.hpp"
#include "gcan/error.hpp"
#include "gcan/fc.hpp"
#include "gcan/synth.hpp"

using namespace gcan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("gcan_test_fc_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

AtlasPtr small_atlas(int n) { return make_atlas(AtlasPartition({{"A", n}})); }

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

FcMatrix random_fc(const AtlasPtr& atlas, std::mt19937_64& rng) {
    const auto n = static_cast<std::size_t>(atlas->total_regions());
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = d(rng);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return FcMatrix(atlas, m);
}

Cohort cohort_of(const AtlasPtr& atlas, const std::vector<FcMatrix>& fcs, Label label) {
    Cohort c(atlas);
    for (std::size_t i = 0; i < fcs.size(); ++i) c.add({"s" + std::to_string(i), label, fcs[i]}, Split::Train);
    return c;
}

}  // namespace

TEST_CASE("default atlas has the six canonical networks") {
    const auto a = AtlasPartition::default_partition();
    REQUIRE(a.network_count() == 6);
    const char* names[] = {"CER", "CON", "DMN", "OCC", "FPN", "SMN"};
    for (int i = 0; i < 6; ++i) CHECK(a.networks()[static_cast<std::size_t>(i)].name == names[i]);
    CHECK(a.total_regions() == 160);
    CHECK(a.network_of(0) == 0);
    CHECK(a.network_of(17) == 0);
    CHECK(a.network_of(18) == 1);
    CHECK(a.network_name_of(159) == "SMN");
}

TEST_CASE("atlas validation and file round trip") {
    CHECK_THROWS_AS(AtlasPartition({{"A", 0}}), ParameterError);
    CHECK_THROWS_AS(AtlasPartition({{"A", 2}, {"A", 3}}), ParameterError);
    auto dir = scratch_dir("atlas");
    save_atlas(AtlasPartition::default_partition(), dir / "atlas.csv");
    CHECK(load_atlas(dir / "atlas.csv") == AtlasPartition::default_partition());
}

TEST_CASE("load_fc examples") {
    auto dir = scratch_dir("load");
    auto atlas = small_atlas(4);

    write_file(dir / "id.csv", "1,0.0,0.0,0.0\n0.0,1,0.0,0.0\n0.0,0.0,1,0.0\n0.0,0.0,0.0,1\n");
    auto id = load_fc(dir / "id.csv", atlas);
    CHECK(id.fc.values() == Matrix::identity(4));
    CHECK(id.repairs.empty());

    write_file(dir / "asym.csv", "1,0,0,0\n0,1,0.5,0\n0,0.3,1,0\n0,0,0,1\n");
    auto asym = load_fc(dir / "asym.csv", atlas);
    CHECK(asym.fc(1, 2) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(asym.fc(2, 1) == asym.fc(1, 2));
    CHECK(asym.repairs.size() == 1);

    write_file(dir / "five.csv", "1,0,0,0,0\n0,1,0,0,0\n0,0,1,0,0\n0,0,0,1,0\n0,0,0,0,1\n");
    CHECK_THROWS_AS(load_fc(dir / "five.csv", atlas), ShapeError);

    write_file(dir / "bad.csv", "1,0,0,0\n0,1,x,0\n0,0,1,0\n0,0,0,1\n");
    try {
        load_fc(dir / "bad.csv", atlas);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.row() == 2);
        CHECK(e.col() == 3);
    }

    write_file(dir / "repair.csv", "0.9,1.5,0,0\n1.5,1,0,0\n0,0,1,-3\n0,0,-3,1\n");
    auto rep = load_fc(dir / "repair.csv", atlas);
    CHECK(rep.fc(0, 0) == 1.0);
    CHECK(rep.fc(0, 1) == 1.0);
    CHECK(rep.fc(2, 3) == -1.0);
    CHECK(rep.repairs.size() == 2);
}

TEST_CASE("save_fc format and round trip") {
    auto dir = scratch_dir("save");
    auto atlas = small_atlas(4);
    save_fc(FcMatrix::identity(atlas), dir / "id.csv");
    const auto lines = csv::read_lines(dir / "id.csv");
    REQUIRE(lines.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto cells = csv::split(lines[i]);
        REQUIRE(cells.size() == 4);
        CHECK(cells[i] == "1");
    }
    CHECK_THROWS_AS(save_fc(FcMatrix::identity(atlas), dir), IoError);

    std::mt19937_64 rng(3);
    auto big = small_atlas(23);
    for (int trial = 0; trial < 5; ++trial) {
        const FcMatrix fc = random_fc(big, rng);
        save_fc(fc, dir / "r.csv");
        CHECK(load_fc(dir / "r.csv", big).fc.values().max_abs_diff(fc.values()) < 1e-9);
    }
}

TEST_CASE("FcMatrix constructor enforces invariants") {
    auto atlas = small_atlas(2);
    CHECK_THROWS_AS(FcMatrix(atlas, Matrix(2, 2, 0.0)), ParameterError);
    CHECK_THROWS_AS(FcMatrix(atlas, Matrix(2, 2, {1, 0.2, 0.3, 1})), ParameterError);
    CHECK_THROWS_AS(FcMatrix(atlas, Matrix(2, 2, {1, 2, 2, 1})), ParameterError);
    CHECK_THROWS_AS(FcMatrix(atlas, Matrix::identity(3)), ShapeError);
}

TEST_CASE("mean_fc examples") {
    auto atlas = small_atlas(5);
    auto constant_fc = [&](double v) {
        Matrix m(5, 5, v);
        for (std::size_t i = 0; i < 5; ++i) m(i, i) = 1.0;
        return FcMatrix(atlas, m);
    };
    auto c = cohort_of(atlas, {constant_fc(0.2), constant_fc(0.4)}, Label::HC);
    const auto m = mean_fc(c, Label::HC, Split::Train);
    CHECK(m(0, 1) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(m(3, 3) == 1.0);

    std::mt19937_64 rng(5);
    const FcMatrix single = random_fc(atlas, rng);
    CHECK(mean_fc(cohort_of(atlas, {single}, Label::MCI), Label::MCI, Split::Train).values() == single.values());
    CHECK(mean_fc(cohort_of(atlas, {single, single}, Label::MCI), Label::MCI, Split::Train).values() == single.values());

    CHECK_THROWS_AS(mean_fc(c, Label::SCD, Split::Train), EmptyClassError);
    CHECK_THROWS_AS(mean_fc(c, Label::HC, Split::Test), EmptyClassError);
}

TEST_CASE("mean_fc equals a brute-force per-entry mean") {
    auto atlas = small_atlas(9);
    std::mt19937_64 rng(17);
    std::vector<FcMatrix> fcs;
    for (int i = 0; i < 10; ++i) fcs.push_back(random_fc(atlas, rng));
    const auto m = mean_fc(cohort_of(atlas, fcs, Label::SCD), Label::SCD, Split::Train);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) {
            double s = 0.0;
            for (const auto& f : fcs) s += f(i, j);
            CHECK(m(i, j) == doctest::Approx(s / 10.0).epsilon(1e-14));
        }
}

TEST_CASE("add_noise examples") {
    auto atlas = small_atlas(6);
    std::mt19937_64 rng(8);
    const FcMatrix fc = random_fc(atlas, rng);
    CHECK(add_noise(fc, 0.0, 1) == fc.values());
    CHECK(add_noise(fc, 0.3, 42) == add_noise(fc, 0.3, 42));
    CHECK(add_noise(fc, 0.3, 42) != add_noise(fc, 0.3, 43));
    CHECK_THROWS_AS(add_noise(fc, -0.1, 1), ParameterError);
    const Matrix noisy = add_noise(fc, 0.3, 7);
    CHECK(noisy == noisy.transposed());

    // Monte-Carlo estimate of the per-entry noise std.
    const double sigma = 0.1;
    double s = 0.0, s2 = 0.0;
    const int samples = 10000;
    for (int k = 0; k < samples; ++k) {
        const double e = add_noise(fc, sigma, static_cast<std::uint64_t>(k) + 1000)(1, 4) - fc(1, 4);
        s += e;
        s2 += e * e;
    }
    const double mean = s / samples;
    const double sd = std::sqrt(s2 / samples - mean * mean);
    CHECK(std::abs(sd - sigma) < 0.01);
}

TEST_CASE("cohort manifest round trip") {
    auto dir = scratch_dir("cohort");
    SynthSpec spec;
    spec.atlas = make_atlas(AtlasPartition({{"A", 4}, {"B", 3}}));
    spec.counts = {{Label::HC, 5}, {Label::MCI, 4}};
    spec.seed = 9;
    const Cohort c = synth_cohort(spec);
    save_cohort(c, dir);
    const Cohort back = load_cohort(dir / "manifest.csv", spec.atlas);
    REQUIRE(back.size() == c.size());
    for (const auto& s : c.subjects()) {
        CHECK(back.subject(s.id).label == s.label);
        CHECK(back.split_of(s.id) == c.split_of(s.id));
        CHECK(back.subject(s.id).fc.values().max_abs_diff(s.fc.values()) == 0.0);
    }
}

TEST_CASE("cohort rejects duplicate ids and foreign atlases") {
    auto atlas = small_atlas(3);
    Cohort c(atlas);
    c.add({"a", Label::HC, FcMatrix::identity(atlas)}, Split::Train);
    CHECK_THROWS_AS(c.add({"a", Label::HC, FcMatrix::identity(atlas)}, Split::Test), ParameterError);
    auto other = make_atlas(AtlasPartition({{"Z", 3}}));
    CHECK_THROWS_AS(c.add({"b", Label::HC, FcMatrix::identity(other)}, Split::Test), AtlasMismatchError);
}

TEST_CASE("synth_cohort: no planted signal means indistinguishable classes") {
    SynthSpec spec;
    spec.atlas = make_atlas(AtlasPartition::default_partition());
    spec.counts = {{Label::HC, 30}, {Label::MCI, 30}};
    spec.planted = {{Label::HC, Label::MCI, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 0.0}};
    spec.seed = 21;
    const Cohort c = synth_cohort(spec);
    std::vector<const Subject*> a, b;
    for (const auto& s : c.subjects()) (s.label == Label::HC ? a : b).push_back(&s);
    const int n = 160;
    int tests = 0, rejections = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            auto stats = [&](const std::vector<const Subject*>& g) {
                double m = 0, v = 0;
                for (auto* s : g) m += s->fc(i, j);
                m /= g.size();
                for (auto* s : g) v += (s->fc(i, j) - m) * (s->fc(i, j) - m);
                return std::pair{m, v / (g.size() - 1)};
            };
            auto [ma, va] = stats(a);
            auto [mb, vb] = stats(b);
            const double na = a.size(), nb = b.size();
            const double se2 = va / na + vb / nb;
            const double t = (ma - mb) / std::sqrt(se2);
            const double df = se2 * se2 / ((va / na) * (va / na) / (na - 1) + (vb / nb) * (vb / nb) / (nb - 1));
            boost::math::students_t dist(df);
            const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
            ++tests;
            if (p < 0.01) ++rejections;
        }
    CHECK(static_cast<double>(rejections) / tests <= 0.02);
}

TEST_CASE("synth_cohort: planted block shifts the affected class mean") {
    SynthSpec spec;
    spec.atlas = make_atlas(AtlasPartition::default_partition());
    spec.counts = {{Label::HC, 50}, {Label::MCI, 50}};
    std::vector<int> regions{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    spec.planted = {{Label::HC, Label::MCI, regions, 0.3}};
    spec.seed = 4;
    const Cohort c = synth_cohort(spec);
    // Class means recomputed directly from the subjects, independent of mean_fc.
    const int n = 160;
    Matrix sum_hc(n, n), sum_mci(n, n);
    int n_hc = 0, n_mci = 0;
    for (const auto& s : c.subjects()) {
        Matrix& acc = s.label == Label::HC ? sum_hc : sum_mci;
        (s.label == Label::HC ? n_hc : n_mci)++;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) acc(i, j) += s.fc(i, j);
    }
    double total = 0.0;
    int count = 0;
    for (int r : regions)
        for (int j = 0; j < n; ++j) {
            if (j == r) continue;
            total += sum_mci(r, j) / n_mci - sum_hc(r, j) / n_hc;
            ++count;
        }
    CHECK(total / count >= 0.2);
}

TEST_CASE("synth_cohort is deterministic and stratified") {
    SynthSpec spec;
    spec.atlas = make_atlas(AtlasPartition({{"A", 6}, {"B", 4}}));
    spec.counts = {{Label::HC, 60}, {Label::SCD, 20}, {Label::MCI, 60}};
    spec.seed = 77;
    const Cohort a = synth_cohort(spec);
    const Cohort b = synth_cohort(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.subjects()[i].id == b.subjects()[i].id);
        CHECK(a.subjects()[i].fc.values() == b.subjects()[i].fc.values());
        CHECK(a.split_of(a.subjects()[i].id) == b.split_of(b.subjects()[i].id));
    }
    CHECK(a.count(Label::HC, Split::Train) == 42);
    CHECK(a.count(Label::HC, Split::Val) == 9);
    CHECK(a.count(Label::HC, Split::Test) == 9);
    CHECK(a.count(Label::SCD, Split::Train) == 14);
    CHECK(a.count(Label::SCD, Split::Val) == 3);
    CHECK(a.count(Label::SCD, Split::Test) == 3);

    SynthSpec empty = spec;
    empty.counts = {{Label::HC, 0}, {Label::MCI, 0}};
    CHECK_THROWS_AS(synth_cohort(empty), ParameterError);
    SynthSpec bad = spec;
    bad.planted = {{Label::HC, Label::MCI, {10}, 0.3}};
    CHECK_THROWS_AS(synth_cohort(bad), ParameterError);
    bad.planted = {{Label::HC, Label::MCI, {1}, 0.6}};
    CHECK_THROWS_AS(synth_cohort(bad), ParameterError);
}
