#pragma once

// Synthetic cohorts with planted discriminative region sets. These are the
// ground truth the attention-recovery checks are scored against.

#include <cstdint>
#include <map>
#include <vector>

#include "gcan/fc.hpp"

namespace gcan {

// Subjects labeled `affected` get every correlation touching a region in
// `regions` (its rows and columns, off-diagonal) shifted by `delta`;
// `reference` names the comparison class.
struct PlantedBlock {
    Label reference = Label::HC;
    Label affected = Label::MCI;
    std::vector<int> regions;
    double delta = 0.0;
};

struct SynthSpec {
    AtlasPtr atlas;
    std::map<Label, int> counts;
    std::vector<PlantedBlock> planted;
    double noise_std = 0.1;
    std::uint64_t seed = 0;

    // Throws ParameterError on out-of-range regions, |delta| > 0.5, negative
    // counts or noise, or a spec with no subjects.
    void validate() const;
};

// Group template + per-subject Gaussian deviations + planted shifts, repaired
// into valid FC matrices. Splits are stratified by label (70/15/15, rounded).
Cohort synth_cohort(const SynthSpec& spec);

struct SplitCounts {
    int train = 0;
    int val = 0;
    int test = 0;
};
SplitCounts stratified_split_counts(int n);

}  // namespace gcan
