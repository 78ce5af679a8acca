#pragma once

// Building blocks shared by the AABT, the classifiers and the perceptual
// extractor. Every module exposes collect(), which appends its parameters
// under dotted names (e.g. "net3.block1.attn.q.weight"); those names are the
// keys of the checkpoint archive.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gcan/autodiff.hpp"

namespace gcan::nn {

using ad::Tensor;
using Rng = std::mt19937_64;

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::string join(const std::string& prefix, const std::string& name);

Tensor zeros_param(ad::Shape shape);
Tensor ones_param(ad::Shape shape);
Tensor normal_param(ad::Shape shape, double stddev, Rng& rng);
Tensor uniform_param(ad::Shape shape, double bound, Rng& rng);

std::vector<Tensor> tensors(const ParamList& params);
std::size_t parameter_count(const ParamList& params);
void set_trainable(const ParamList& params, bool trainable);
void zero_grad(const ParamList& params);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(int in, int out, Rng& rng);

    int in_features() const { return weight.dim(0); }
    int out_features() const { return weight.dim(1); }
    // x [m, in] -> [m, out]
    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    explicit LayerNorm(int dim);

    Tensor forward(const Tensor& x) const { return ad::layer_norm_rows(x, gamma, beta); }
    void collect(ParamList& out, const std::string& prefix) const;
};

struct MultiHeadAttention {
    Linear q, k, v, o;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(int dim, int heads, Rng& rng);

    // Self-attention over the rows of x [tokens, dim].
    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct FeedForward {
    Linear fc1, fc2;

    FeedForward() = default;
    FeedForward(int dim, int hidden, Rng& rng);

    Tensor forward(const Tensor& x) const { return fc2.forward(ad::gelu(fc1.forward(x))); }
    void collect(ParamList& out, const std::string& prefix) const;
};

// Pre-norm block: x + attn(ln1(x)), then + mlp(ln2(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward mlp;

    TransformerBlock() = default;
    TransformerBlock(int dim, int heads, double mlp_ratio, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv2d {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out], undefined when the layer has no bias
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(int in, int out, int kernel, int stride, int pad, bool with_bias, Rng& rng);

    Tensor forward(const Tensor& x) const { return ad::conv2d(x, weight, bias, stride, pad); }
    void collect(ParamList& out, const std::string& prefix) const;
};

struct GroupNorm {
    Tensor gamma;
    Tensor beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(int channels, int groups);

    Tensor forward(const Tensor& x) const { return ad::group_norm(x, groups, gamma, beta); }
    void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace gcan::nn
