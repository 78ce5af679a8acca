#include "gcan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "gcan/error.hpp"

namespace gcan {

namespace {

constexpr double kWithinNetwork = 0.35;
constexpr double kBetweenNetwork = 0.05;
constexpr double kTemplateJitter = 0.1;

std::string subject_id(Label label, int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", index + 1);
    return std::string(to_string(label)) + "-" + buf;
}

}  // namespace

void SynthSpec::validate() const {
    if (!atlas) throw ParameterError("synth spec needs an atlas");
    if (!(noise_std >= 0.0)) throw ParameterError("noise_std must be non-negative");
    int total = 0;
    for (const auto& [label, n] : counts) {
        if (n < 0) throw ParameterError("negative subject count for " + std::string(to_string(label)));
        total += n;
    }
    if (total == 0) throw ParameterError("synth spec has no subjects (all label counts are 0)");
    for (const auto& b : planted) {
        if (std::abs(b.delta) > 0.5) throw ParameterError("planted shift |delta| must be at most 0.5");
        if (b.regions.empty()) throw ParameterError("planted block has no regions");
        for (int r : b.regions)
            if (r < 0 || r >= atlas->total_regions())
                throw ParameterError("planted region " + std::to_string(r) + " outside the atlas");
    }
}

SplitCounts stratified_split_counts(int n) {
    SplitCounts s;
    s.train = static_cast<int>(std::floor(0.70 * n + 0.5));
    s.val = static_cast<int>(std::floor(0.15 * n + 0.5));
    s.val = std::min(s.val, n - s.train);
    s.test = n - s.train - s.val;
    return s;
}

Cohort synth_cohort(const SynthSpec& spec) {
    spec.validate();
    const AtlasPartition& atlas = *spec.atlas;
    const int n = atlas.total_regions();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    // Shared population template: network-blocked mean correlations plus a
    // fixed symmetric jitter.
    Matrix tmpl(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        tmpl(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            const double base = atlas.network_of(i) == atlas.network_of(j) ? kWithinNetwork : kBetweenNetwork;
            const double v = base + kTemplateJitter * unit(rng);
            tmpl(i, j) = v;
            tmpl(j, i) = v;
        }
    }

    Cohort cohort(spec.atlas);
    for (Label label : kAllLabels) {
        const auto it = spec.counts.find(label);
        const int count = it == spec.counts.end() ? 0 : it->second;
        if (count == 0) continue;

        std::vector<std::set<int>> shifts;
        std::vector<double> deltas;
        for (const auto& b : spec.planted) {
            if (b.affected != label) continue;
            shifts.emplace_back(b.regions.begin(), b.regions.end());
            deltas.push_back(b.delta);
        }

        std::vector<Subject> subjects;
        for (int k = 0; k < count; ++k) {
            Matrix m = tmpl;
            for (int i = 0; i < n; ++i) {
                for (int j = i + 1; j < n; ++j) {
                    double v = m(i, j) + spec.noise_std * unit(rng);
                    for (std::size_t b = 0; b < shifts.size(); ++b)
                        if (shifts[b].count(i) || shifts[b].count(j)) v += deltas[b];
                    m(i, j) = v;
                    m(j, i) = v;
                }
            }
            subjects.push_back({subject_id(label, k), label, FcMatrix::repaired(spec.atlas, std::move(m))});
        }

        std::vector<int> order(static_cast<std::size_t>(count));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const SplitCounts sc = stratified_split_counts(count);
        std::vector<Split> assignment(static_cast<std::size_t>(count));
        for (int r = 0; r < count; ++r) {
            const int pos = order[static_cast<std::size_t>(r)];
            assignment[static_cast<std::size_t>(pos)] = r < sc.train ? Split::Train : (r < sc.train + sc.val ? Split::Val : Split::Test);
        }
        for (int k = 0; k < count; ++k)
            cohort.add(std::move(subjects[static_cast<std::size_t>(k)]), assignment[static_cast<std::size_t>(k)]);
    }
    return cohort;
}

}  // namespace gcan
