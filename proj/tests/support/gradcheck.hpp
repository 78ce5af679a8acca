#pragma once

// Central finite-difference oracle for reverse-mode gradients. Only forward
// evaluations are used to form the numeric estimate, so it stays independent
// of every backward closure it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gcan/autodiff.hpp"
#include "gcan/nn.hpp"

namespace gcan::testing {

struct GradSample {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradSample> samples;
    double max_rel_error = 0.0;
};

inline double relative_error(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Checks `count` (parameter, entry) pairs drawn uniformly over tensors, then
// uniformly over entries. `loss` must rebuild the graph on every call.
inline GradCheckReport check_gradients(const std::function<ad::Tensor()>& loss, const nn::ParamList& params,
                                       int count, std::uint64_t seed, double h = 1e-5) {
    nn::zero_grad(params);
    {
        ad::Tensor l = loss();
        l.backward();
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_tensor(0, params.size() - 1);
    GradCheckReport report;
    for (int s = 0; s < count; ++s) {
        const auto& p = params[pick_tensor(rng)];
        std::uniform_int_distribution<std::size_t> pick_entry(0, p.tensor.numel() - 1);
        const std::size_t idx = pick_entry(rng);
        ad::Tensor t = p.tensor;
        const double analytic = t.has_grad() ? t.grad()[idx] : 0.0;
        const double original = t.values()[idx];
        double plus = 0.0, minus = 0.0;
        {
            ad::NoGradGuard guard;
            t.mutable_values()[idx] = original + h;
            plus = loss().item();
            t.mutable_values()[idx] = original - h;
            minus = loss().item();
            t.mutable_values()[idx] = original;
        }
        const double numeric = (plus - minus) / (2.0 * h);
        GradSample g{p.name, idx, analytic, numeric, relative_error(analytic, numeric)};
        report.max_rel_error = std::max(report.max_rel_error, g.rel_error);
        report.samples.push_back(g);
    }
    return report;
}

}  // namespace gcan::testing
