#include "gcan/perceptual.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "gcan/error.hpp"

namespace gcan {

namespace {

constexpr int kChannels[PerceptualExtractor::kStages + 1] = {3, 8, 16, 32, 64, 64};
constexpr double kMean[3] = {0.485, 0.456, 0.406};
constexpr double kStd[3] = {0.229, 0.224, 0.225};

}  // namespace

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed, std::vector<int> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("perceptual layer set is empty");
    for (int l : layers_)
        if (l < 1 || l > kStages) throw ConfigError("perceptual layer " + std::to_string(l) + " outside 1.." + std::to_string(kStages));
    std::sort(layers_.begin(), layers_.end());
    layers_.erase(std::unique(layers_.begin(), layers_.end()), layers_.end());
    std::mt19937_64 rng(seed);
    for (int s = 0; s < kStages; ++s) {
        const int in = kChannels[s], out = kChannels[s + 1];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in * 9)));
        std::vector<double> w(static_cast<std::size_t>(out) * in * 9);
        for (double& v : w) v = dist(rng);
        weights_.push_back(ad::Tensor::constant({out, in, 3, 3}, std::move(w)));
        biases_.push_back(ad::Tensor::zeros({out}));
    }
}

std::vector<ad::Tensor> PerceptualExtractor::features(const ad::Tensor& fc) const {
    if (fc.rank() != 2 || fc.dim(0) != fc.dim(1)) throw ShapeError("perceptual features need a square matrix");
    const int n = fc.dim(0);
    // [-1, 1] -> [0, 1] -> per-channel ImageNet normalization.
    const ad::Tensor unit = ad::add_scalar(ad::scale(fc, 0.5), 0.5);
    std::vector<ad::Tensor> channels;
    for (int c = 0; c < 3; ++c)
        channels.push_back(ad::reshape(ad::add_scalar(ad::scale(unit, 1.0 / kStd[c]), -kMean[c] / kStd[c]), {1, n * n}));
    ad::Tensor x = ad::reshape(ad::concat_rows(channels), {3, n, n});

    std::vector<ad::Tensor> out;
    const int last = *std::max_element(layers_.begin(), layers_.end());
    for (int s = 1; s <= last; ++s) {
        if (s > 1) x = ad::avg_pool2(x);
        x = ad::relu(ad::conv2d(x, weights_[static_cast<std::size_t>(s - 1)], biases_[static_cast<std::size_t>(s - 1)], 1, 1));
        if (std::find(layers_.begin(), layers_.end(), s) != layers_.end()) out.push_back(x);
    }
    return out;
}

std::vector<double> PerceptualExtractor::weights_snapshot() const {
    std::vector<double> out;
    for (const auto& w : weights_) out.insert(out.end(), w.values().begin(), w.values().end());
    return out;
}

ad::Tensor perceptual_loss(const ad::Tensor& a, const ad::Tensor& b, const PerceptualExtractor& px) {
    if (a.shape() != b.shape()) throw ShapeError("perceptual_loss: shape mismatch");
    const auto fa = px.features(a);
    const auto fb = px.features(b);
    ad::Tensor total = ad::mse(fa[0], fb[0]);
    for (std::size_t i = 1; i < fa.size(); ++i) total = ad::add(total, ad::mse(fa[i], fb[i]));
    return ad::scale(total, 1.0 / static_cast<double>(fa.size()));
}

}  // namespace gcan
