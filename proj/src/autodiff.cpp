#include "gcan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "gcan/error.hpp"
#include "gcan/kernels.hpp"

namespace gcan::ad {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

void check(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

// Allocates a result node; history is only recorded when some parent needs it.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> parents, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Tensor& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
            node->backward = std::move(fn);
        }
    }
    return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> value, std::span<const Tensor> parents, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Tensor& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
            node->backward = std::move(fn);
        }
    }
    return Tensor(std::move(node));
}

// Gradient buffer of parent i, or null when it does not take gradients.
double* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    return p.ensure_grad().data();
}

template <class F>
Tensor unary(const Tensor& x, F&& f, std::function<double(double x, double y)> dfdx) {
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
        double* gx = grad_of(self, 0);
        if (!gx) return;
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
    });
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank(const Tensor& x, std::size_t r, const char* op) {
    check(x.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_string(x.shape()));
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& Node::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    check(ad::numel(shape) == values.size(), "constant: " + std::to_string(values.size()) + " values for shape " +
                                             shape_string(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = ad::numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
    const std::size_t n = ad::numel(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
    return constant({static_cast<int>(m.rows()), static_cast<int>(m.cols())}, m.vector());
}

double Tensor::item() const {
    check(numel() == 1, "item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    return node_->value[0];
}

Matrix Tensor::to_matrix() const {
    require_rank(*this, 2, "to_matrix");
    return Matrix(static_cast<std::size_t>(dim(0)), static_cast<std::size_t>(dim(1)), node_->value);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return constant(node_->shape, node_->value); }

void Tensor::backward() {
    check(numel() == 1, "backward: root must be a scalar, got " + shape_string(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // Release interior history and gradients; leaves keep theirs.
    for (Node* n : order) {
        if (n->backward) {
            n->backward = nullptr;
            n->parents.clear();
            if (n != node_.get()) {
                n->grad.clear();
                n->grad.shrink_to_fit();
            }
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (double* g = grad_of(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        if (double* g = grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    });
}

Tensor scale(const Tensor& x, double s) {
    return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(c * (v + a * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
        });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---- broadcasting ----------------------------------------------------------

Tensor add_row_vector(const Tensor& x, const Tensor& b) {
    require_rank(x, 2, "add_row_vector");
    const int m = x.dim(0), n = x.dim(1);
    check(b.numel() == static_cast<std::size_t>(n), "add_row_vector: bias length mismatch");
    std::vector<double> out(x.values().begin(), x.values().end());
    auto bv = b.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += bv[j];
    return make_result(x.shape(), std::move(out), {x, b}, [m, n](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = grad_of(self, 1))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    });
}

Tensor mul_channels(const Tensor& x, const Tensor& s) {
    require_rank(x, 3, "mul_channels");
    const int c = x.dim(0);
    const int plane = x.dim(1) * x.dim(2);
    check(s.numel() == static_cast<std::size_t>(c), "mul_channels: scale length mismatch");
    std::vector<double> out(x.numel());
    auto xv = x.values();
    auto sv = s.values();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < plane; ++i) {
            const std::size_t k = static_cast<std::size_t>(ch) * plane + i;
            out[k] = xv[k] * sv[ch];
        }
    return make_result(x.shape(), std::move(out), {x, s}, [c, plane](Node& self) {
        const auto& xv = self.parents[0]->value;
        const auto& sv = self.parents[1]->value;
        double* gx = grad_of(self, 0);
        double* gs = grad_of(self, 1);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < plane; ++i) {
                const std::size_t k = static_cast<std::size_t>(ch) * plane + i;
                if (gx) gx[k] += self.grad[k] * sv[ch];
                if (gs) gs[ch] += self.grad[k] * xv[k];
            }
    });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto xv = x.values();
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result({1}, {s}, {x}, [](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    check(x.numel() > 0, "mean: empty tensor");
    auto xv = x.values();
    const double n = static_cast<double>(xv.size());
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
    return make_result({1}, {s}, {x}, [n](Node& self) {
        if (double* g = grad_of(self, 0)) {
            const std::size_t len = self.parents[0]->value.size();
            for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[0] / n;
        }
    });
}

Tensor mean_rows(const Tensor& x) {
    require_rank(x, 2, "mean_rows");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    auto xv = x.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += xv[static_cast<std::size_t>(i) * n + j];
    for (double& v : out) v /= m;
    return make_result({n}, std::move(out), {x}, [m, n](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[j] / m;
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 3, "global_avg_pool");
    const int c = x.dim(0);
    const int plane = x.dim(1) * x.dim(2);
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    auto xv = x.values();
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = 0; i < plane; ++i) s += xv[static_cast<std::size_t>(ch) * plane + i];
        out[ch] = s / plane;
    }
    return make_result({c}, std::move(out), {x}, [c, plane](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < plane; ++i) g[static_cast<std::size_t>(ch) * plane + i] += self.grad[ch] / plane;
    });
}

// ---- linear algebra and layout --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = trans_a ? a.dim(1) : a.dim(0);
    const int k = trans_a ? a.dim(0) : a.dim(1);
    const int kb = trans_b ? b.dim(1) : b.dim(0);
    const int n = trans_b ? b.dim(0) : b.dim(1);
    check(k == kb, "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    kernels::gemm(trans_a, trans_b, m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return make_result({m, n}, std::move(out), {a, b}, [m, n, k, trans_a, trans_b](Node& self) {
        const double* av = self.parents[0]->value.data();
        const double* bv = self.parents[1]->value.data();
        const double* gc = self.grad.data();
        if (double* ga = grad_of(self, 0)) {
            // dA = dC op(B)^T, stored in A's own layout.
            if (!trans_a)
                kernels::gemm(false, !trans_b, m, k, n, gc, bv, ga, true);
            else
                kernels::gemm(trans_b, true, k, m, n, bv, gc, ga, true);
        }
        if (double* gb = grad_of(self, 1)) {
            if (!trans_b)
                kernels::gemm(!trans_a, false, k, n, m, av, gc, gb, true);
            else
                kernels::gemm(true, trans_a, n, k, m, gc, av, gb, true);
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_rank(x, 2, "transpose");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
    return make_result({n, m}, std::move(out), {x}, [m, n](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check(numel(shape) == x.numel(), "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
    require_rank(x, 2, "slice_rows");
    const int n = x.dim(1);
    check(0 <= begin && begin <= end && end <= x.dim(0), "slice_rows: range out of bounds");
    auto xv = x.values();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin) * n,
                            xv.begin() + static_cast<std::ptrdiff_t>(end) * n);
    return make_result({end - begin, n}, std::move(out), {x}, [begin, n](Node& self) {
        if (double* g = grad_of(self, 0)) {
            double* dst = g + static_cast<std::size_t>(begin) * n;
            for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
        }
    });
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
    require_rank(x, 2, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    check(0 <= begin && begin <= end && end <= n, "slice_cols: range out of bounds");
    const int w = end - begin;
    std::vector<double> out(static_cast<std::size_t>(m) * w);
    auto xv = x.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out[static_cast<std::size_t>(i) * w + j] = xv[static_cast<std::size_t>(i) * n + begin + j];
    return make_result({m, w}, std::move(out), {x}, [m, n, w, begin](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) g[static_cast<std::size_t>(i) * n + begin + j] += self.grad[static_cast<std::size_t>(i) * w + j];
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    check(!parts.empty(), "concat_rows: no inputs");
    const int n = parts.front().dim(1);
    int rows = 0;
    std::vector<int> offsets;
    for (const Tensor& p : parts) {
        require_rank(p, 2, "concat_rows");
        check(p.dim(1) == n, "concat_rows: column counts differ");
        offsets.push_back(rows);
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows) * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_result_n({rows, n}, std::move(out), parts, [offsets, n](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            double* g = grad_of(self, p);
            if (!g) continue;
            const std::size_t len = self.parents[p]->value.size();
            const double* src = self.grad.data() + static_cast<std::size_t>(offsets[p]) * n;
            for (std::size_t i = 0; i < len; ++i) g[i] += src[i];
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    check(!parts.empty(), "concat_cols: no inputs");
    const int m = parts.front().dim(0);
    int cols = 0;
    std::vector<int> offsets, widths;
    for (const Tensor& p : parts) {
        require_rank(p, 2, "concat_cols");
        check(p.dim(0) == m, "concat_cols: row counts differ");
        offsets.push_back(cols);
        widths.push_back(p.dim(1));
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(m) * cols);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto v = parts[p].values();
        for (int i = 0; i < m; ++i)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i) * widths[p], widths[p],
                        out.begin() + static_cast<std::ptrdiff_t>(i) * cols + offsets[p]);
    }
    return make_result_n({m, cols}, std::move(out), parts, [offsets, widths, m, cols](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            double* g = grad_of(self, p);
            if (!g) continue;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < widths[p]; ++j)
                    g[static_cast<std::size_t>(i) * widths[p] + j] += self.grad[static_cast<std::size_t>(i) * cols + offsets[p] + j];
        }
    });
}

Tensor pad_cols(const Tensor& x, int width) {
    require_rank(x, 2, "pad_cols");
    const int m = x.dim(0), n = x.dim(1);
    check(width >= n, "pad_cols: target width smaller than input");
    if (width == n) return x;
    std::vector<double> out(static_cast<std::size_t>(m) * width, 0.0);
    auto xv = x.values();
    for (int i = 0; i < m; ++i)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(i) * n, n, out.begin() + static_cast<std::ptrdiff_t>(i) * width);
    return make_result({m, width}, std::move(out), {x}, [m, n, width](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(i) * width + j];
    });
}

Tensor set_diagonal(const Tensor& x, double v) {
    require_rank(x, 2, "set_diagonal");
    const int n = x.dim(0);
    check(x.dim(1) == n, "set_diagonal: matrix not square");
    std::vector<double> out(x.values().begin(), x.values().end());
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * n + i] = v;
    return make_result(x.shape(), std::move(out), {x}, [n](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (i != j) g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(i) * n + j];
    });
}

Tensor symmetrize(const Tensor& x) {
    require_rank(x, 2, "symmetrize");
    const int n = x.dim(0);
    check(x.dim(1) == n, "symmetrize: matrix not square");
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] =
                0.5 * (xv[static_cast<std::size_t>(i) * n + j] + xv[static_cast<std::size_t>(j) * n + i]);
    return make_result(x.shape(), std::move(out), {x}, [n](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    g[static_cast<std::size_t>(i) * n + j] +=
                        0.5 * (self.grad[static_cast<std::size_t>(i) * n + j] + self.grad[static_cast<std::size_t>(j) * n + i]);
    });
}

Tensor to_patches(const Tensor& x, int patch) {
    require_rank(x, 2, "to_patches");
    const int rows = x.dim(0), width = x.dim(1);
    check(patch > 0 && width % patch == 0, "to_patches: width " + std::to_string(width) +
                                               " not divisible by patch width " + std::to_string(patch));
    const int tokens = width / patch;
    const int flat = rows * patch;
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (int t = 0; t < tokens; ++t)
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < patch; ++c)
                out[static_cast<std::size_t>(t) * flat + r * patch + c] = xv[static_cast<std::size_t>(r) * width + t * patch + c];
    return make_result({tokens, flat}, std::move(out), {x}, [rows, width, tokens, patch, flat](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int t = 0; t < tokens; ++t)
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < patch; ++c)
                        g[static_cast<std::size_t>(r) * width + t * patch + c] += self.grad[static_cast<std::size_t>(t) * flat + r * patch + c];
    });
}

Tensor from_patches(const Tensor& t, int rows, int patch) {
    require_rank(t, 2, "from_patches");
    const int tokens = t.dim(0), flat = t.dim(1);
    check(flat == rows * patch, "from_patches: token width " + std::to_string(flat) + " != rows*patch " +
                                    std::to_string(rows * patch));
    const int width = tokens * patch;
    std::vector<double> out(t.numel());
    auto tv = t.values();
    for (int k = 0; k < tokens; ++k)
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < patch; ++c)
                out[static_cast<std::size_t>(r) * width + k * patch + c] = tv[static_cast<std::size_t>(k) * flat + r * patch + c];
    return make_result({rows, width}, std::move(out), {t}, [rows, width, tokens, patch, flat](Node& self) {
        if (double* g = grad_of(self, 0))
            for (int k = 0; k < tokens; ++k)
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < patch; ++c)
                        g[static_cast<std::size_t>(k) * flat + r * patch + c] += self.grad[static_cast<std::size_t>(r) * width + k * patch + c];
    });
}

// ---- neural network primitives --------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.numel());
    auto xv = x.values();
    for (int i = 0; i < m; ++i) {
        const double* row = xv.data() + static_cast<std::size_t>(i) * n;
        double* o = out.data() + static_cast<std::size_t>(i) * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += (o[j] = std::exp(row[j] - mx));
        for (int j = 0; j < n; ++j) o[j] /= s;
    }
    return make_result(x.shape(), std::move(out), {x}, [m, n](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) return;
        for (int i = 0; i < m; ++i) {
            const double* y = self.value.data() + static_cast<std::size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

namespace {

// Shared normalization core: normalizes `count` groups of `len` contiguous
// values; channel_of maps a flat index to its affine parameter slot.
struct NormCache {
    std::vector<double> xhat;
    std::vector<double> inv_std;
};

}  // namespace

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm_rows");
    const int m = x.dim(0), n = x.dim(1);
    check(gamma.numel() == static_cast<std::size_t>(n) && beta.numel() == static_cast<std::size_t>(n),
          "layer_norm_rows: affine parameter length mismatch");
    auto cache = std::make_shared<NormCache>();
    cache->xhat.resize(x.numel());
    cache->inv_std.resize(static_cast<std::size_t>(m));
    std::vector<double> out(x.numel());
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (int i = 0; i < m; ++i) {
        const double* row = xv.data() + static_cast<std::size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        cache->inv_std[i] = is;
        for (int j = 0; j < n; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            cache->xhat[k] = (row[j] - mu) * is;
            out[k] = cache->xhat[k] * gv[j] + bv[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [m, n, cache](Node& self) {
        const auto& gv = self.parents[1]->value;
        double* gx = grad_of(self, 0);
        double* gg = grad_of(self, 1);
        double* gb = grad_of(self, 2);
        for (int i = 0; i < m; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * n;
            double mean_d = 0.0, mean_dx = 0.0;
            for (int j = 0; j < n; ++j) {
                const double d = self.grad[base + j] * gv[j];
                mean_d += d;
                mean_dx += d * cache->xhat[base + j];
                if (gg) gg[j] += self.grad[base + j] * cache->xhat[base + j];
                if (gb) gb[j] += self.grad[base + j];
            }
            mean_d /= n;
            mean_dx /= n;
            if (gx)
                for (int j = 0; j < n; ++j) {
                    const double d = self.grad[base + j] * gv[j];
                    gx[base + j] += cache->inv_std[i] * (d - mean_d - cache->xhat[base + j] * mean_dx);
                }
        }
    });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 3, "group_norm");
    const int c = x.dim(0);
    const int plane = x.dim(1) * x.dim(2);
    check(groups > 0 && c % groups == 0, "group_norm: channels not divisible by groups");
    check(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
          "group_norm: affine parameter length mismatch");
    const int per = c / groups;
    const std::size_t len = static_cast<std::size_t>(per) * plane;
    auto cache = std::make_shared<NormCache>();
    cache->xhat.resize(x.numel());
    cache->inv_std.resize(static_cast<std::size_t>(groups));
    std::vector<double> out(x.numel());
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (int g = 0; g < groups; ++g) {
        const std::size_t base = static_cast<std::size_t>(g) * len;
        double mu = 0.0;
        for (std::size_t i = 0; i < len; ++i) mu += xv[base + i];
        mu /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t i = 0; i < len; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
        var /= static_cast<double>(len);
        const double is = 1.0 / std::sqrt(var + eps);
        cache->inv_std[g] = is;
        for (std::size_t i = 0; i < len; ++i) {
            const int ch = g * per + static_cast<int>(i / plane);
            cache->xhat[base + i] = (xv[base + i] - mu) * is;
            out[base + i] = cache->xhat[base + i] * gv[ch] + bv[ch];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [groups, per, plane, len, cache](Node& self) {
        const auto& gv = self.parents[1]->value;
        double* gx = grad_of(self, 0);
        double* gg = grad_of(self, 1);
        double* gb = grad_of(self, 2);
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = static_cast<std::size_t>(g) * len;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const int ch = g * per + static_cast<int>(i / plane);
                const double dy = self.grad[base + i];
                const double d = dy * gv[ch];
                mean_d += d;
                mean_dx += d * cache->xhat[base + i];
                if (gg) gg[ch] += dy * cache->xhat[base + i];
                if (gb) gb[ch] += dy;
            }
            mean_d /= static_cast<double>(len);
            mean_dx /= static_cast<double>(len);
            if (gx)
                for (std::size_t i = 0; i < len; ++i) {
                    const int ch = g * per + static_cast<int>(i / plane);
                    const double d = self.grad[base + i] * gv[ch];
                    gx[base + i] += cache->inv_std[g] * (d - mean_d - cache->xhat[base + i] * mean_dx);
                }
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d weight");
    kernels::ConvGeometry geo;
    geo.channels = x.dim(0);
    geo.height = x.dim(1);
    geo.width = x.dim(2);
    geo.kernel = w.dim(2);
    geo.stride = stride;
    geo.pad = pad;
    const int out_c = w.dim(0);
    check(w.dim(1) == geo.channels && w.dim(3) == geo.kernel, "conv2d: weight shape " + shape_string(w.shape()) +
                                                                   " incompatible with input " + shape_string(x.shape()));
    const bool has_bias = b.defined();
    if (has_bias) check(b.numel() == static_cast<std::size_t>(out_c), "conv2d: bias length mismatch");
    const int oh = geo.out_height(), ow = geo.out_width();
    check(oh > 0 && ow > 0, "conv2d: empty output");
    const int plane = oh * ow;
    const int patch = geo.patch_size();

    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(patch) * plane);
    kernels::im2col(geo, x.values().data(), cols->data());
    std::vector<double> out(static_cast<std::size_t>(out_c) * plane);
    kernels::gemm(false, false, out_c, plane, patch, w.values().data(), cols->data(), out.data(), false);
    if (has_bias) {
        auto bv = b.values();
        for (int o = 0; o < out_c; ++o)
            for (int i = 0; i < plane; ++i) out[static_cast<std::size_t>(o) * plane + i] += bv[o];
    }

    auto fn = [geo, out_c, plane, patch, cols, has_bias](Node& self) {
        const double* gy = self.grad.data();
        if (double* gw = grad_of(self, 1)) kernels::gemm(false, true, out_c, patch, plane, gy, cols->data(), gw, true);
        if (has_bias)
            if (double* gb = grad_of(self, 2))
                for (int o = 0; o < out_c; ++o) {
                    double s = 0.0;
                    for (int i = 0; i < plane; ++i) s += gy[static_cast<std::size_t>(o) * plane + i];
                    gb[o] += s;
                }
        if (double* gx = grad_of(self, 0)) {
            std::vector<double> dcols(static_cast<std::size_t>(patch) * plane);
            kernels::gemm(true, false, patch, plane, out_c, self.parents[1]->value.data(), gy, dcols.data(), false);
            kernels::col2im(geo, dcols.data(), gx);
        }
    };
    if (has_bias) return make_result({out_c, oh, ow}, std::move(out), {x, w, b}, fn);
    return make_result({out_c, oh, ow}, std::move(out), {x, w}, fn);
}

Tensor avg_pool2(const Tensor& x) {
    require_rank(x, 3, "avg_pool2");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int oh = h / 2, ow = w / 2;
    check(oh > 0 && ow > 0, "avg_pool2: input too small");
    std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
    auto xv = x.values();
    auto at = [h, w](int ch, int y, int xx) { return (static_cast<std::size_t>(ch) * h + y) * w + xx; };
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                out[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] =
                    0.25 * (xv[at(ch, 2 * y, 2 * xx)] + xv[at(ch, 2 * y, 2 * xx + 1)] + xv[at(ch, 2 * y + 1, 2 * xx)] +
                            xv[at(ch, 2 * y + 1, 2 * xx + 1)]);
    return make_result({c, oh, ow}, std::move(out), {x}, [c, oh, ow, at](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) return;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const double d = 0.25 * self.grad[(static_cast<std::size_t>(ch) * oh + y) * ow + xx];
                    g[at(ch, 2 * y, 2 * xx)] += d;
                    g[at(ch, 2 * y, 2 * xx + 1)] += d;
                    g[at(ch, 2 * y + 1, 2 * xx)] += d;
                    g[at(ch, 2 * y + 1, 2 * xx + 1)] += d;
                }
    });
}

Tensor cross_entropy(const Tensor& logits, int target) {
    const int k = static_cast<int>(logits.numel());
    check(target >= 0 && target < k, "cross_entropy: target " + std::to_string(target) + " out of range");
    auto lv = logits.values();
    const double mx = *std::max_element(lv.begin(), lv.end());
    double s = 0.0;
    for (double v : lv) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    const double loss = lse - lv[target];
    return make_result({1}, {loss}, {logits}, [k, target, lse](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) return;
        const auto& lv = self.parents[0]->value;
        for (int i = 0; i < k; ++i) g[i] += self.grad[0] * (std::exp(lv[i] - lse) - (i == target ? 1.0 : 0.0));
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mse");
    check(a.numel() > 0, "mse: empty tensors");
    auto av = a.values(), bv = b.values();
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
    return make_result({1}, {s / n}, {a, b}, [n](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const double c = 2.0 * self.grad[0] / n;
        if (double* g = grad_of(self, 0))
            for (std::size_t i = 0; i < av.size(); ++i) g[i] += c * (av[i] - bv[i]);
        if (double* g = grad_of(self, 1))
            for (std::size_t i = 0; i < av.size(); ++i) g[i] -= c * (av[i] - bv[i]);
    });
}

}  // namespace gcan::ad
