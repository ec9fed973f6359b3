#pragma once

#include <cstdint>

// Dense compute kernels. Every kernel here is OpenMP-parallel over disjoint
// output elements with a fixed per-element summation order, so results are
// bitwise independent of the thread count. `reference::` holds the plain
// serial versions used by the tests and the benchmark.

namespace wv::kernels {

/// C[M,N] (+)= A[M,K] B[K,N]
void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);
/// C[M,N] (+)= A[K,M]^T B[K,N]
void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);
/// C[M,N] (+)= A[M,K] B[N,K]^T
void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);

void transpose(int rows, int cols, const double* src, double* dst);

struct Conv3dGeom {
  int in_ch, t, h, w;  // input extents
  int k, stride, pad;  // cubic kernel
  int out_t() const { return (t + 2 * pad - k) / stride + 1; }
  int out_h() const { return (h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (w + 2 * pad - k) / stride + 1; }
  std::int64_t col_rows() const { return static_cast<std::int64_t>(in_ch) * k * k * k; }
  std::int64_t col_cols() const { return static_cast<std::int64_t>(out_t()) * out_h() * out_w(); }
};

/// x[C,T,H,W] -> cols[C*k^3, To*Ho*Wo] (zero padding).
void im2col3d(const Conv3dGeom& g, const double* x, double* cols);
/// Adjoint of im2col3d: accumulates cols into dx.
void col2im3d(const Conv3dGeom& g, const double* cols, double* dx);

/// Row-wise numerically stable softmax in place.
void softmax_rows(int rows, int cols, double* x);

/// Single-level orthonormal Haar of x[C,T,H,W] (even extents) into
/// bands[8,C,T/2,H/2,W/2]; band index = 4*t_bit + 2*h_bit + w_bit, 1 = detail.
void haar3d_forward(int c, int t, int h, int w, const double* x, double* bands);
/// Exact inverse (and adjoint) of haar3d_forward; t, h, w are the full extents.
void haar3d_inverse(int c, int t, int h, int w, const double* bands, double* x);

namespace reference {
void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);
void conv3d(const Conv3dGeom& g, int out_ch, const double* x, const double* w, const double* bias, double* y);
void softmax_rows(int rows, int cols, double* x);
}  // namespace reference

/// Number of OpenMP threads kernels will use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace wv::kernels
