#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a handle to a graph node. Operations record their parents and a
// backward closure while gradient recording is enabled; calling backward() on
// a scalar result walks the graph in reverse topological order and
// accumulates gradients into every node that requires them. Parameters are
// long-lived leaf tensors whose gradients accumulate across calls until
// zero_grad() is invoked.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gcan/matrix.hpp"

namespace gcan::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    std::vector<double>& ensure_grad();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    // Leaf that records gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);
    static Tensor from_matrix(const Matrix& m);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    bool has_grad() const { return !node_->grad.empty(); }

    double item() const;
    double at(std::size_t i) const { return node_->value.at(i); }
    Matrix to_matrix() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    void zero_grad();
    // Backpropagates from this scalar. Intermediate closures are released
    // afterwards so the graph cannot be replayed.
    void backward();

    // Same values, no history.
    Tensor detach() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Gradient recording is enabled by default; this guard disables it for its
// scope on the current thread.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- broadcasting ----------------------------------------------------------
// x [m, n] + b [n] added to every row.
Tensor add_row_vector(const Tensor& x, const Tensor& b);
// x [C, H, W] scaled per channel by s [C].
Tensor mul_channels(const Tensor& x, const Tensor& s);

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// x [m, n] -> [n], averaging over rows.
Tensor mean_rows(const Tensor& x);
// x [C, H, W] -> [C].
Tensor global_avg_pool(const Tensor& x);

// ---- linear algebra and layout --------------------------------------------
// op(a) [m, k] * op(b) [k, n].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// Zero-pads a 2-D tensor on the right up to `width` columns.
Tensor pad_cols(const Tensor& x, int width);
// Square 2-D tensor with its diagonal overwritten by v (no gradient through the diagonal).
Tensor set_diagonal(const Tensor& x, double v);
// (x + x^T) / 2.
Tensor symmetrize(const Tensor& x);
// x [rows, T*patch] -> [T, rows*patch]; token t is the row-major flattening of
// columns [t*patch, (t+1)*patch).
Tensor to_patches(const Tensor& x, int patch);
// Inverse of to_patches: t [T, rows*patch] -> [rows, T*patch].
Tensor from_patches(const Tensor& t, int rows, int patch);

// ---- neural network primitives --------------------------------------------
Tensor softmax_rows(const Tensor& x);
// Row-wise normalization of x [m, n] with affine gamma, beta [n].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// x [C, H, W] normalized over groups of C/groups channels, affine per channel.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// x [C, H, W], w [O, C, k, k], b [O] (may be undefined) -> [O, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
// 2x2 average pooling with stride 2 (odd trailing rows/cols dropped).
Tensor avg_pool2(const Tensor& x);
// -log softmax(logits)[target] for a logits vector.
Tensor cross_entropy(const Tensor& logits, int target);
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace gcan::ad
