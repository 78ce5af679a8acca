#pragma once

// Counterfactual attention: differences between generated target-label FC and
// real source FC, reduced to per-region weights with positive and negative
// views, aggregated over directions, and used to mask classifier inputs.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcan/fc.hpp"

namespace gcan::cf {

using Direction = std::pair<Label, Label>;  // (source, target)

struct SignedDiff {
    Matrix values;  // symmetric, zero diagonal
    Direction direction;
};

struct AttentionMap {
    std::vector<double> region_weights;  // in [0, 1], max 1 unless all zero
    std::vector<double> positive;        // >= 0
    std::vector<double> negative;        // >= 0
    std::vector<Direction> directions;

    std::size_t size() const noexcept { return region_weights.size(); }
    bool is_zero() const;
};

// c_g_t - c_r_s. Throws AtlasMismatchError when the atlases differ.
SignedDiff counterfactual_diff(const FcMatrix& c_g_t, const FcMatrix& c_r_s, Direction direction);

// Row means of the positive and negative parts, averaged over all diffs, then
// weights = (positive + negative) / max.
AttentionMap region_attention(std::span<const SignedDiff> diffs, const AtlasPartition& atlas);

// Mean of the views across maps, renormalized; directions are the union.
AttentionMap aggregate(std::span<const AttentionMap> maps);

// Off-diagonal entries scaled by max(floor, (w_i + w_j) / 2); diagonal stays 1.
FcMatrix mask_fc(const FcMatrix& fc, const AttentionMap& map, double floor);

enum class View { Combined, Positive, Negative };

struct RankedRegion {
    int region = 0;
    std::string network;
    double weight = 0.0;
};

// Top k by weight, ties toward the lower region index.
std::vector<RankedRegion> top_regions(const AttentionMap& map, int k, const AtlasPartition& atlas,
                                      View view = View::Combined);

// |top_k(weights) ∩ planted| / k.
double recovery_score(const AttentionMap& map, std::span<const int> planted, int k);

// CSV `region_index,network,weight,positive,negative`.
void save_attention_map(const AttentionMap& map, const AtlasPartition& atlas, const std::filesystem::path& path);
AttentionMap load_attention_map(const std::filesystem::path& path, const AtlasPartition& atlas);

using Coord = std::array<double, 3>;

// Deterministic placeholder coordinates: regions spread over a sphere of
// radius 70 on a Fibonacci lattice, in atlas order.
std::vector<Coord> default_coords(int regions);

// BrainNet-style node file: `x y z color size label` per region, color is the
// 1-based network index, size the region weight (6 significant digits).
void export_nodes(const AttentionMap& map, std::span<const Coord> coords, const AtlasPartition& atlas,
                  const std::filesystem::path& path);

}  // namespace gcan::cf
