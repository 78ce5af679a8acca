#pragma once

// Dense numeric kernels behind the autodiff layer. The default entry points
// are OpenMP-parallel; the `reference` namespace holds straightforward serial
// versions that the tests compare against and the benchmark times.

namespace gcan::kernels {

// C[m,n] = op(A) * op(B) (+ C when accumulate). op(A) is m x k, op(B) is k x n.
// With trans_a, A is stored k x m; with trans_b, B is stored n x k. Row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate);

struct ConvGeometry {
    int channels = 1;
    int height = 0;
    int width = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    int patch_size() const { return channels * kernel * kernel; }
};

// cols has shape [channels*kernel*kernel, out_h*out_w].
void im2col(const ConvGeometry& g, const double* x, double* cols);
// Scatter-adds cols back into dx (shape [channels, height, width]).
void col2im(const ConvGeometry& g, const double* cols, double* dx);

// out[o, oh, ow] = bias[o] + sum_{c,ky,kx} w[o,c,ky,kx] * x[c, ...]; bias may be null.
void conv2d(const ConvGeometry& g, int out_channels, const double* x, const double* w, const double* bias, double* out);

// Threads used by the parallel kernels. Defaults to the OpenMP runtime value,
// capped by the GCAN_THREADS environment variable when set.
void configure_threads_from_env();
void set_num_threads(int n);
int num_threads();

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b, double* c,
          bool accumulate);

void conv2d(const ConvGeometry& g, int out_channels, const double* x, const double* w, const double* bias,
            double* out);

}  // namespace reference

}  // namespace gcan::kernels
