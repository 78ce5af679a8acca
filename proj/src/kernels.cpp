#include "gcan/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gcan::kernels {

namespace {

constexpr int kRowBlock = 32;
constexpr int kColBlock = 256;
constexpr int kDepthBlock = 128;

// Row-major transpose of an r x c matrix into a c x r buffer.
std::vector<double> transpose_copy(const double* src, int r, int c) {
    std::vector<double> dst(static_cast<std::size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) dst[static_cast<std::size_t>(j) * r + i] = src[static_cast<std::size_t>(i) * c + j];
    return dst;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate) {
    if (m == 0 || n == 0) return;
    std::vector<double> a_buf, b_buf;
    if (trans_a) {
        a_buf = transpose_copy(a, k, m);
        a = a_buf.data();
    }
    if (trans_b) {
        b_buf = transpose_copy(b, n, k);
        b = b_buf.data();
    }
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    if (k == 0) return;

    const int row_blocks = (m + kRowBlock - 1) / kRowBlock;
    const int col_blocks = (n + kColBlock - 1) / kColBlock;
#pragma omp parallel for collapse(2) schedule(static)
    for (int rb = 0; rb < row_blocks; ++rb) {
        for (int cb = 0; cb < col_blocks; ++cb) {
            const int i0 = rb * kRowBlock, i1 = std::min(m, i0 + kRowBlock);
            const int j0 = cb * kColBlock, j1 = std::min(n, j0 + kColBlock);
            for (int p0 = 0; p0 < k; p0 += kDepthBlock) {
                const int p1 = std::min(k, p0 + kDepthBlock);
                for (int i = i0; i < i1; ++i) {
                    double* crow = c + static_cast<std::size_t>(i) * n;
                    const double* arow = a + static_cast<std::size_t>(i) * k;
                    for (int p = p0; p < p1; ++p) {
                        const double av = arow[p];
                        if (av == 0.0) continue;
                        const double* brow = b + static_cast<std::size_t>(p) * n;
#pragma omp simd
                        for (int j = j0; j < j1; ++j) crow[j] += av * brow[j];
                    }
                }
            }
        }
    }
}

void im2col(const ConvGeometry& g, const double* x, double* cols) {
    const int oh = g.out_height(), ow = g.out_width();
    const int plane = oh * ow;
    const int rows = g.patch_size();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int c = r / (g.kernel * g.kernel);
        const int ky = (r / g.kernel) % g.kernel;
        const int kx = r % g.kernel;
        double* dst = cols + static_cast<std::size_t>(r) * plane;
        const double* src = x + static_cast<std::size_t>(c) * g.height * g.width;
        for (int y = 0; y < oh; ++y) {
            const int iy = y * g.stride - g.pad + ky;
            double* drow = dst + static_cast<std::size_t>(y) * ow;
            if (iy < 0 || iy >= g.height) {
                std::fill(drow, drow + ow, 0.0);
                continue;
            }
            const double* srow = src + static_cast<std::size_t>(iy) * g.width;
            for (int xo = 0; xo < ow; ++xo) {
                const int ix = xo * g.stride - g.pad + kx;
                drow[xo] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0;
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* cols, double* dx) {
    const int oh = g.out_height(), ow = g.out_width();
    const int plane = oh * ow;
    const int kk = g.kernel * g.kernel;
    // Channels own disjoint slices of dx, so parallelizing over them is race-free.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.channels; ++c) {
        double* dst = dx + static_cast<std::size_t>(c) * g.height * g.width;
        for (int q = 0; q < kk; ++q) {
            const int ky = q / g.kernel, kx = q % g.kernel;
            const double* src = cols + static_cast<std::size_t>(c * kk + q) * plane;
            for (int y = 0; y < oh; ++y) {
                const int iy = y * g.stride - g.pad + ky;
                if (iy < 0 || iy >= g.height) continue;
                double* drow = dst + static_cast<std::size_t>(iy) * g.width;
                const double* srow = src + static_cast<std::size_t>(y) * ow;
                for (int xo = 0; xo < ow; ++xo) {
                    const int ix = xo * g.stride - g.pad + kx;
                    if (ix >= 0 && ix < g.width) drow[ix] += srow[xo];
                }
            }
        }
    }
}

void conv2d(const ConvGeometry& g, int out_channels, const double* x, const double* w, const double* bias,
            double* out) {
    const int plane = g.out_height() * g.out_width();
    std::vector<double> cols(static_cast<std::size_t>(g.patch_size()) * plane);
    im2col(g, x, cols.data());
    gemm(false, false, out_channels, plane, g.patch_size(), w, cols.data(), out, false);
    if (bias) {
        for (int o = 0; o < out_channels; ++o) {
            double* dst = out + static_cast<std::size_t>(o) * plane;
            for (int i = 0; i < plane; ++i) dst[i] += bias[o];
        }
    }
}

void configure_threads_from_env() {
#ifdef _OPENMP
    if (const char* env = std::getenv("GCAN_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) omp_set_num_threads(std::min(n, omp_get_num_procs()));
        } catch (const std::exception&) {
            // Malformed values leave the runtime default in place.
        }
    }
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
                const double bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
                s += av * bv;
            }
            double& dst = c[static_cast<std::size_t>(i) * n + j];
            dst = accumulate ? dst + s : s;
        }
    }
}

void conv2d(const ConvGeometry& g, int out_channels, const double* x, const double* w, const double* bias,
            double* out) {
    const int oh = g.out_height(), ow = g.out_width();
    for (int o = 0; o < out_channels; ++o) {
        for (int y = 0; y < oh; ++y) {
            for (int xo = 0; xo < ow; ++xo) {
                double s = bias ? bias[o] : 0.0;
                for (int c = 0; c < g.channels; ++c) {
                    for (int ky = 0; ky < g.kernel; ++ky) {
                        const int iy = y * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.height) continue;
                        for (int kx = 0; kx < g.kernel; ++kx) {
                            const int ix = xo * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.width) continue;
                            s += w[((static_cast<std::size_t>(o) * g.channels + c) * g.kernel + ky) * g.kernel + kx] *
                                 x[(static_cast<std::size_t>(c) * g.height + iy) * g.width + ix];
                        }
                    }
                }
                out[(static_cast<std::size_t>(o) * oh + y) * ow + xo] = s;
            }
        }
    }
}

}  // namespace reference

}  // namespace gcan::kernels
