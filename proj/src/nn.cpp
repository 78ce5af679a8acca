#include "gcan/nn.hpp"

#include <algorithm>
#include <cmath>

#include "gcan/error.hpp"

namespace gcan::nn {

std::string join(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

Tensor zeros_param(ad::Shape shape) {
    const std::size_t n = ad::numel(shape);
    return Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor ones_param(ad::Shape shape) {
    const std::size_t n = ad::numel(shape);
    return Tensor::parameter(std::move(shape), std::vector<double>(n, 1.0));
}

Tensor normal_param(ad::Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor uniform_param(ad::Shape shape, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::parameter(std::move(shape), std::move(v));
}

std::vector<Tensor> tensors(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

void set_trainable(const ParamList& params, bool trainable) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.set_requires_grad(trainable);
        if (!trainable) t.zero_grad();
    }
}

void zero_grad(const ParamList& params) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

Linear::Linear(int in, int out, Rng& rng)
    : weight(uniform_param({in, out}, std::sqrt(6.0 / (in + out)), rng)), bias(zeros_param({out})) {}

Tensor Linear::forward(const Tensor& x) const { return ad::add_row_vector(ad::matmul(x, weight), bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join(prefix, "weight"), weight});
    out.push_back({join(prefix, "bias"), bias});
}

LayerNorm::LayerNorm(int dim) : gamma(ones_param({dim})), beta(zeros_param({dim})) {}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join(prefix, "gamma"), gamma});
    out.push_back({join(prefix, "beta"), beta});
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads_, Rng& rng)
    : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng), heads(heads_) {
    if (heads <= 0 || dim % heads != 0)
        throw ParameterError("attention: embed dim " + std::to_string(dim) + " not divisible by " +
                             std::to_string(heads) + " heads");
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
    const int dim = x.dim(1);
    const int head_dim = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const Tensor qx = q.forward(x);
    const Tensor kx = k.forward(x);
    const Tensor vx = v.forward(x);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * head_dim, c1 = c0 + head_dim;
        const Tensor qh = ad::slice_cols(qx, c0, c1);
        const Tensor kh = ad::slice_cols(kx, c0, c1);
        const Tensor vh = ad::slice_cols(vx, c0, c1);
        const Tensor scores = ad::scale(ad::matmul(qh, kh, false, true), inv_sqrt);
        outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    const Tensor merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
    return o.forward(merged);
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
    q.collect(out, join(prefix, "q"));
    k.collect(out, join(prefix, "k"));
    v.collect(out, join(prefix, "v"));
    o.collect(out, join(prefix, "o"));
}

FeedForward::FeedForward(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, join(prefix, "fc1"));
    fc2.collect(out, join(prefix, "fc2"));
}

TransformerBlock::TransformerBlock(int dim, int heads, double mlp_ratio, Rng& rng)
    : ln1(dim),
      ln2(dim),
      attn(dim, heads, rng),
      mlp(dim, std::max(1, static_cast<int>(std::lround(mlp_ratio * dim))), rng) {}

Tensor TransformerBlock::forward(const Tensor& x) const {
    const Tensor h = ad::add(x, attn.forward(ln1.forward(x)));
    return ad::add(h, mlp.forward(ln2.forward(h)));
}

void TransformerBlock::collect(ParamList& out, const std::string& prefix) const {
    ln1.collect(out, join(prefix, "ln1"));
    attn.collect(out, join(prefix, "attn"));
    ln2.collect(out, join(prefix, "ln2"));
    mlp.collect(out, join(prefix, "mlp"));
}

Conv2d::Conv2d(int in, int out, int kernel, int stride_, int pad_, bool with_bias, Rng& rng)
    : weight(normal_param({out, in, kernel, kernel}, std::sqrt(2.0 / (in * kernel * kernel)), rng)),
      stride(stride_),
      pad(pad_) {
    if (with_bias) bias = zeros_param({out});
}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join(prefix, "weight"), weight});
    if (bias.defined()) out.push_back({join(prefix, "bias"), bias});
}

GroupNorm::GroupNorm(int channels, int groups_)
    : gamma(ones_param({channels})), beta(zeros_param({channels})), groups(groups_) {
    if (groups <= 0 || channels % groups != 0)
        throw ParameterError("group norm: " + std::to_string(channels) + " channels not divisible into " +
                             std::to_string(groups) + " groups");
}

void GroupNorm::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join(prefix, "gamma"), gamma});
    out.push_back({join(prefix, "beta"), beta});
}

}  // namespace gcan::nn
