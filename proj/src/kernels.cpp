#include "wv/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wv::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + static_cast<std::ptrdiff_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::ptrdiff_t>(p) * m + i];
      const double* bp = b + static_cast<std::ptrdiff_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
  std::vector<double> bt(static_cast<std::size_t>(k) * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void transpose(int rows, int cols, const double* src, double* dst) {
  constexpr int kBlock = 32;
#pragma omp parallel for schedule(static)
  for (int r0 = 0; r0 < rows; r0 += kBlock) {
    const int r1 = std::min(rows, r0 + kBlock);
    for (int c0 = 0; c0 < cols; c0 += kBlock) {
      const int c1 = std::min(cols, c0 + kBlock);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          dst[static_cast<std::ptrdiff_t>(c) * rows + r] = src[static_cast<std::ptrdiff_t>(r) * cols + c];
    }
  }
}

void im2col3d(const Conv3dGeom& g, const double* x, double* cols) {
  const int ot = g.out_t(), oh = g.out_h(), ow = g.out_w();
  const std::ptrdiff_t ncol = static_cast<std::ptrdiff_t>(ot) * oh * ow;
  const int k = g.k;
  const int rows = static_cast<int>(g.col_rows());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int dw = r % k, dh = (r / k) % k, dt = (r / (k * k)) % k, ci = r / (k * k * k);
    const double* xc = x + static_cast<std::ptrdiff_t>(ci) * g.t * g.h * g.w;
    double* out = cols + r * ncol;
    for (int a = 0; a < ot; ++a) {
      const int it = a * g.stride - g.pad + dt;
      for (int b = 0; b < oh; ++b) {
        const int ih = b * g.stride - g.pad + dh;
        double* row = out + (static_cast<std::ptrdiff_t>(a) * oh + b) * ow;
        if (it < 0 || it >= g.t || ih < 0 || ih >= g.h) {
          std::fill(row, row + ow, 0.0);
          continue;
        }
        const double* xs = xc + (static_cast<std::ptrdiff_t>(it) * g.h + ih) * g.w;
        for (int c = 0; c < ow; ++c) {
          const int iw = c * g.stride - g.pad + dw;
          row[c] = (iw < 0 || iw >= g.w) ? 0.0 : xs[iw];
        }
      }
    }
  }
}

void col2im3d(const Conv3dGeom& g, const double* cols, double* dx) {
  const int ot = g.out_t(), oh = g.out_h(), ow = g.out_w();
  const std::ptrdiff_t ncol = static_cast<std::ptrdiff_t>(ot) * oh * ow;
  const int k = g.k, k3 = k * k * k;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.in_ch; ++ci) {
    double* xc = dx + static_cast<std::ptrdiff_t>(ci) * g.t * g.h * g.w;
    for (int q = 0; q < k3; ++q) {
      const int dw = q % k, dh = (q / k) % k, dt = q / (k * k);
      const double* in = cols + (static_cast<std::ptrdiff_t>(ci) * k3 + q) * ncol;
      for (int a = 0; a < ot; ++a) {
        const int it = a * g.stride - g.pad + dt;
        if (it < 0 || it >= g.t) continue;
        for (int b = 0; b < oh; ++b) {
          const int ih = b * g.stride - g.pad + dh;
          if (ih < 0 || ih >= g.h) continue;
          const double* row = in + (static_cast<std::ptrdiff_t>(a) * oh + b) * ow;
          double* xs = xc + (static_cast<std::ptrdiff_t>(it) * g.h + ih) * g.w;
          for (int c = 0; c < ow; ++c) {
            const int iw = c * g.stride - g.pad + dw;
            if (iw >= 0 && iw < g.w) xs[iw] += row[c];
          }
        }
      }
    }
  }
}

void softmax_rows(int rows, int cols, double* x) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    double* row = x + static_cast<std::ptrdiff_t>(r) * cols;
    double mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      s += row[c];
    }
    const double inv = 1.0 / s;
    for (int c = 0; c < cols; ++c) row[c] *= inv;
  }
}

namespace {
// sign of input corner (a,b,c) in band (st,sh,sw)
inline double haar_sign(int corner, int band) {
  // parity of detail bits where the corner index is 1
  return (__builtin_popcount(corner & band) & 1) ? -1.0 : 1.0;
}
}  // namespace

void haar3d_forward(int c, int t, int h, int w, const double* x, double* bands) {
  const int t2 = t / 2, h2 = h / 2, w2 = w / 2;
  const std::ptrdiff_t band_stride = static_cast<std::ptrdiff_t>(c) * t2 * h2 * w2;
  const double norm = 1.0 / (2.0 * std::sqrt(2.0));
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    const double* xc = x + static_cast<std::ptrdiff_t>(ch) * t * h * w;
    for (int a = 0; a < t2; ++a)
      for (int b = 0; b < h2; ++b)
        for (int d = 0; d < w2; ++d) {
          double v[8];
          for (int corner = 0; corner < 8; ++corner) {
            const int dt = (corner >> 2) & 1, dh = (corner >> 1) & 1, dw = corner & 1;
            v[corner] = xc[(static_cast<std::ptrdiff_t>(2 * a + dt) * h + (2 * b + dh)) * w + (2 * d + dw)];
          }
          const std::ptrdiff_t out = ((static_cast<std::ptrdiff_t>(ch) * t2 + a) * h2 + b) * w2 + d;
          for (int band = 0; band < 8; ++band) {
            double s = 0.0;
            for (int corner = 0; corner < 8; ++corner) s += haar_sign(corner, band) * v[corner];
            bands[band * band_stride + out] = s * norm;
          }
        }
  }
}

void haar3d_inverse(int c, int t, int h, int w, const double* bands, double* x) {
  const int t2 = t / 2, h2 = h / 2, w2 = w / 2;
  const std::ptrdiff_t band_stride = static_cast<std::ptrdiff_t>(c) * t2 * h2 * w2;
  const double norm = 1.0 / (2.0 * std::sqrt(2.0));
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double* xc = x + static_cast<std::ptrdiff_t>(ch) * t * h * w;
    for (int a = 0; a < t2; ++a)
      for (int b = 0; b < h2; ++b)
        for (int d = 0; d < w2; ++d) {
          const std::ptrdiff_t in = ((static_cast<std::ptrdiff_t>(ch) * t2 + a) * h2 + b) * w2 + d;
          double cf[8];
          for (int band = 0; band < 8; ++band) cf[band] = bands[band * band_stride + in];
          for (int corner = 0; corner < 8; ++corner) {
            double s = 0.0;
            for (int band = 0; band < 8; ++band) s += haar_sign(corner, band) * cf[band];
            const int dt = (corner >> 2) & 1, dh = (corner >> 1) & 1, dw = corner & 1;
            xc[(static_cast<std::ptrdiff_t>(2 * a + dt) * h + (2 * b + dh)) * w + (2 * d + dw)] = s * norm;
          }
        }
  }
}

namespace reference {

void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void conv3d(const Conv3dGeom& g, int out_ch, const double* x, const double* w, const double* bias, double* y) {
  const int ot = g.out_t(), oh = g.out_h(), ow = g.out_w(), k = g.k;
  for (int co = 0; co < out_ch; ++co)
    for (int a = 0; a < ot; ++a)
      for (int b = 0; b < oh; ++b)
        for (int c = 0; c < ow; ++c) {
          double s = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < g.in_ch; ++ci)
            for (int dt = 0; dt < k; ++dt)
              for (int dh = 0; dh < k; ++dh)
                for (int dw = 0; dw < k; ++dw) {
                  const int it = a * g.stride - g.pad + dt, ih = b * g.stride - g.pad + dh,
                            iw = c * g.stride - g.pad + dw;
                  if (it < 0 || it >= g.t || ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) continue;
                  s += w[(((co * g.in_ch + ci) * k + dt) * k + dh) * k + dw] *
                       x[((ci * g.t + it) * g.h + ih) * g.w + iw];
                }
          y[((co * ot + a) * oh + b) * ow + c] = s;
        }
}

void softmax_rows(int rows, int cols, double* x) {
  for (int r = 0; r < rows; ++r) {
    double* row = x + r * cols;
    double mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    for (int c = 0; c < cols; ++c) row[c] = std::exp(row[c] - mx) / s;
  }
}

}  // namespace reference
}  // namespace wv::kernels
