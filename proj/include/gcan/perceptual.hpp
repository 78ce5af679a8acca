#pragma once

// Frozen convolutional feature pyramid used by the perceptual loss. Five
// VGG-style stages (3x3 conv + ReLU, 2x2 average pool between stages) with
// fixed weights drawn once from a seeded He-normal distribution; features are
// read after the configured stages (default 2 and 3). Weights are plain constants, never parameters,
// so no optimizer can reach them.

#include <cstdint>
#include <vector>

#include "gcan/autodiff.hpp"

namespace gcan {

class PerceptualExtractor {
public:
    static constexpr int kStages = 5;

    // Throws ConfigError unless `layers` is a non-empty subset of 1..kStages.
    explicit PerceptualExtractor(std::uint64_t seed = 16, std::vector<int> layers = {2, 3});

    // (N, N) matrix with entries in [-1, 1] -> features after each requested
    // stage. The matrix is replicated to 3 channels and mapped to the
    // ImageNet-normalized range first.
    std::vector<ad::Tensor> features(const ad::Tensor& fc) const;
    const std::vector<int>& layers() const { return layers_; }
    // Fingerprint of the fixed weights, for frozen-ness checks.
    std::vector<double> weights_snapshot() const;

private:
    std::vector<ad::Tensor> weights_;  // one [out, in, 3, 3] per stage
    std::vector<ad::Tensor> biases_;
    std::vector<int> layers_;
};

// Mean over the layer set of the MSE between feature maps.
ad::Tensor perceptual_loss(const ad::Tensor& a, const ad::Tensor& b, const PerceptualExtractor& px);

}  // namespace gcan
