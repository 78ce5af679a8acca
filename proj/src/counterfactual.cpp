#include "gcan/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gcan/csv.hpp"
#include "gcan/error.hpp"

namespace gcan::cf {

namespace {

void normalize(AttentionMap& m) {
    const std::size_t n = m.positive.size();
    m.region_weights.assign(n, 0.0);
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        m.region_weights[i] = m.positive[i] + m.negative[i];
        peak = std::max(peak, m.region_weights[i]);
    }
    if (peak > 0.0)
        for (double& w : m.region_weights) w /= peak;
}

void add_direction(std::vector<Direction>& set, Direction d) {
    if (std::find(set.begin(), set.end(), d) == set.end()) set.push_back(d);
}

const std::vector<double>& view_of(const AttentionMap& map, View view) {
    switch (view) {
        case View::Positive: return map.positive;
        case View::Negative: return map.negative;
        default: return map.region_weights;
    }
}

std::string format_g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

bool AttentionMap::is_zero() const {
    return std::all_of(region_weights.begin(), region_weights.end(), [](double w) { return w == 0.0; });
}

SignedDiff counterfactual_diff(const FcMatrix& c_g_t, const FcMatrix& c_r_s, Direction direction) {
    if (!same_atlas(c_g_t, c_r_s)) throw AtlasMismatchError("counterfactual_diff: FC matrices use different atlases");
    return {c_g_t.values() - c_r_s.values(), direction};
}

AttentionMap region_attention(std::span<const SignedDiff> diffs, const AtlasPartition& atlas) {
    if (diffs.empty()) throw ParameterError("region_attention: no differences given");
    const auto n = static_cast<std::size_t>(atlas.total_regions());
    AttentionMap m;
    m.positive.assign(n, 0.0);
    m.negative.assign(n, 0.0);
    for (const SignedDiff& d : diffs) {
        if (d.values.rows() != n || d.values.cols() != n)
            throw AtlasMismatchError("region_attention: difference of size " + std::to_string(d.values.rows()) +
                                     " against an atlas of " + std::to_string(n) + " regions");
        for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0, q = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = d.values(i, j);
                p += std::max(v, 0.0);
                q += std::max(-v, 0.0);
            }
            m.positive[i] += p / static_cast<double>(n);
            m.negative[i] += q / static_cast<double>(n);
        }
        add_direction(m.directions, d.direction);
    }
    const double count = static_cast<double>(diffs.size());
    for (std::size_t i = 0; i < n; ++i) {
        m.positive[i] /= count;
        m.negative[i] /= count;
    }
    normalize(m);
    return m;
}

AttentionMap aggregate(std::span<const AttentionMap> maps) {
    if (maps.empty()) throw ParameterError("aggregate: no attention maps given");
    const std::size_t n = maps.front().size();
    AttentionMap out;
    out.positive.assign(n, 0.0);
    out.negative.assign(n, 0.0);
    for (const AttentionMap& m : maps) {
        if (m.size() != n || m.positive.size() != n || m.negative.size() != n)
            throw AtlasMismatchError("aggregate: attention maps cover different region counts");
        for (std::size_t i = 0; i < n; ++i) {
            out.positive[i] += m.positive[i];
            out.negative[i] += m.negative[i];
        }
        for (const Direction& d : m.directions) add_direction(out.directions, d);
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.positive[i] /= static_cast<double>(maps.size());
        out.negative[i] /= static_cast<double>(maps.size());
    }
    normalize(out);
    return out;
}

FcMatrix mask_fc(const FcMatrix& fc, const AttentionMap& map, double floor) {
    if (!(floor >= 0.0 && floor <= 1.0)) throw ParameterError("mask_fc: floor must lie in [0, 1]");
    const auto n = static_cast<std::size_t>(fc.size());
    if (map.size() != n)
        throw AtlasMismatchError("mask_fc: attention map has " + std::to_string(map.size()) + " regions, FC has " +
                                 std::to_string(n));
    Matrix out = fc.values();
    const auto& w = map.region_weights;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out(i, j) = i == j ? 1.0 : out(i, j) * std::max(floor, 0.5 * (w[i] + w[j]));
    return FcMatrix(fc.atlas_ptr(), std::move(out));
}

std::vector<RankedRegion> top_regions(const AttentionMap& map, int k, const AtlasPartition& atlas, View view) {
    const auto& w = view_of(map, view);
    const int n = static_cast<int>(w.size());
    if (n != atlas.total_regions()) throw AtlasMismatchError("top_regions: map does not match the atlas");
    if (k < 1 || k > n) throw ParameterError("top_regions: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        const double wa = w[static_cast<std::size_t>(a)], wb = w[static_cast<std::size_t>(b)];
        return wa != wb ? wa > wb : a < b;
    });
    std::vector<RankedRegion> out;
    for (int i = 0; i < k; ++i) {
        const int r = order[static_cast<std::size_t>(i)];
        out.push_back({r, atlas.network_name_of(r), w[static_cast<std::size_t>(r)]});
    }
    return out;
}

double recovery_score(const AttentionMap& map, std::span<const int> planted, int k) {
    if (planted.empty()) throw ParameterError("recovery_score: planted set is empty");
    const int n = static_cast<int>(map.size());
    if (k < 1 || k > n) throw ParameterError("recovery_score: k out of range");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const auto& w = map.region_weights;
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        const double wa = w[static_cast<std::size_t>(a)], wb = w[static_cast<std::size_t>(b)];
        return wa != wb ? wa > wb : a < b;
    });
    int hits = 0;
    for (int i = 0; i < k; ++i)
        if (std::find(planted.begin(), planted.end(), order[static_cast<std::size_t>(i)]) != planted.end()) ++hits;
    return static_cast<double>(hits) / k;
}

void save_attention_map(const AttentionMap& map, const AtlasPartition& atlas, const std::filesystem::path& path) {
    if (static_cast<int>(map.size()) != atlas.total_regions())
        throw AtlasMismatchError("save_attention_map: map does not match the atlas");
    std::ostringstream os;
    os << "region_index,network,weight,positive,negative\n";
    for (std::size_t i = 0; i < map.size(); ++i)
        os << i << ',' << atlas.network_name_of(static_cast<int>(i)) << ',' << csv::format_double(map.region_weights[i])
           << ',' << csv::format_double(map.positive[i]) << ',' << csv::format_double(map.negative[i]) << '\n';
    csv::write_text(path, os.str());
}

AttentionMap load_attention_map(const std::filesystem::path& path, const AtlasPartition& atlas) {
    const auto lines = csv::read_lines(path);
    const auto n = static_cast<std::size_t>(atlas.total_regions());
    AttentionMap m;
    m.region_weights.assign(n, 0.0);
    m.positive.assign(n, 0.0);
    m.negative.assign(n, 0.0);
    std::vector<bool> seen(n, false);
    for (std::size_t row = 1; row < lines.size(); ++row) {
        if (csv::trim(lines[row]).empty()) continue;
        const auto cells = csv::split(lines[row]);
        if (cells.size() != 5) throw ParseError("attention map: expected 5 columns", static_cast<int>(row + 1), 0);
        const auto idx = csv::parse_int(cells[0]);
        if (!idx || *idx < 0 || static_cast<std::size_t>(*idx) >= n)
            throw ParseError("attention map: bad region index", static_cast<int>(row + 1), 1);
        const auto r = static_cast<std::size_t>(*idx);
        double* dst[] = {&m.region_weights[r], &m.positive[r], &m.negative[r]};
        for (int c = 0; c < 3; ++c) {
            const auto v = csv::parse_double(cells[static_cast<std::size_t>(c) + 2]);
            if (!v) throw ParseError("attention map: non-numeric value", static_cast<int>(row + 1), c + 3);
            *dst[c] = *v;
        }
        seen[r] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw ShapeError("attention map '" + path.string() + "' does not cover every region");
    return m;
}

std::vector<Coord> default_coords(int regions) {
    std::vector<Coord> out;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < regions; ++i) {
        const double y = regions == 1 ? 0.0 : 1.0 - 2.0 * (i + 0.5) / regions;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double theta = golden * i;
        out.push_back({70.0 * r * std::cos(theta), 70.0 * y, 70.0 * r * std::sin(theta)});
    }
    return out;
}

void export_nodes(const AttentionMap& map, std::span<const Coord> coords, const AtlasPartition& atlas,
                  const std::filesystem::path& path) {
    const std::size_t n = map.size();
    if (coords.size() != n)
        throw ShapeError("export_nodes: " + std::to_string(coords.size()) + " coordinates for " + std::to_string(n) +
                         " regions");
    if (static_cast<int>(n) != atlas.total_regions()) throw AtlasMismatchError("export_nodes: map does not match the atlas");
    std::ostringstream os;
    for (std::size_t i = 0; i < n; ++i) {
        const int r = static_cast<int>(i);
        os << format_g6(coords[i][0]) << ' ' << format_g6(coords[i][1]) << ' ' << format_g6(coords[i][2]) << ' '
           << atlas.network_of(r) + 1 << ' ' << format_g6(map.region_weights[i]) << ' ' << atlas.network_name_of(r) << '_'
           << r << '\n';
    }
    csv::write_text(path, os.str());
}

}  // namespace gcan::cf
