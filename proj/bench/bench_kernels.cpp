// Serial reference kernels vs the OpenMP kernels, wall-clock per call.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "wv/autodiff.hpp"
#include "wv/kernels.hpp"
#include "wv/rng.hpp"
#include "wv/tensor.hpp"

using namespace wv;

namespace {

double seconds_per_call(const std::function<void()>& fn, double budget = 0.5) {
  fn();  // warm-up
  int calls = 0;
  const auto start = std::chrono::steady_clock::now();
  double elapsed = 0.0;
  do {
    fn();
    ++calls;
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } while (elapsed < budget);
  return elapsed / calls;
}

std::vector<double> randn(RandomStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void report(const char* name, double flops, double serial, double parallel) {
  std::printf("%-28s serial %9.3f ms (%6.2f GFLOP/s)   omp %9.3f ms (%6.2f GFLOP/s)   x%.2f\n", name, serial * 1e3,
              flops / serial * 1e-9, parallel * 1e3, flops / parallel * 1e-9, serial / parallel);
}

}  // namespace

int main() {
  set_checked_mode(false);
  RandomStream rng(1, 0);
  std::printf("threads: %d\n", kernels::max_threads());

  for (int n : {64, 256, 512}) {
    auto a = randn(rng, static_cast<std::size_t>(n) * n), b = randn(rng, static_cast<std::size_t>(n) * n);
    std::vector<double> c(static_cast<std::size_t>(n) * n);
    const double s = seconds_per_call([&] { kernels::reference::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false); });
    const double p = seconds_per_call([&] { kernels::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false); });
    char name[64];
    std::snprintf(name, sizeof(name), "gemm %dx%dx%d", n, n, n);
    report(name, 2.0 * n * n * n, s, p);
  }

  struct ConvCase {
    const char* name;
    kernels::Conv3dGeom g;
    int out_ch;
  };
  for (const auto& cc : {ConvCase{"conv3x3x3 64->64 @2x8x8", {64, 2, 8, 8, 3, 1, 1}, 64},
                         ConvCase{"conv2s2 3->32 @16x64x64", {3, 16, 64, 64, 2, 2, 0}, 32},
                         ConvCase{"conv3x3x3 8->8 @2x8x8", {8, 2, 8, 8, 3, 1, 1}, 8}}) {
    const auto& g = cc.g;
    auto x = randn(rng, static_cast<std::size_t>(g.in_ch) * g.t * g.h * g.w);
    auto w = randn(rng, static_cast<std::size_t>(cc.out_ch) * g.col_rows());
    std::vector<double> y(static_cast<std::size_t>(cc.out_ch) * g.col_cols());
    const double s = seconds_per_call([&] { kernels::reference::conv3d(g, cc.out_ch, x.data(), w.data(), nullptr, y.data()); });
    ad::Var xv = ad::Var::constant({g.in_ch, g.t, g.h, g.w}, x);
    ad::Var wv = ad::Var::constant({cc.out_ch, g.in_ch, g.k, g.k, g.k}, w);
    const double p = seconds_per_call([&] { ad::conv3d(xv, wv, ad::Var(), g.stride, g.pad); });
    report(cc.name, 2.0 * static_cast<double>(cc.out_ch) * g.col_rows() * g.col_cols(), s, p);
  }

  for (int rows : {384, 2048}) {
    auto x = randn(rng, static_cast<std::size_t>(rows) * rows);
    auto y = x;
    const double s = seconds_per_call([&] {
      y = x;
      kernels::reference::softmax_rows(rows, rows, y.data());
    });
    const double p = seconds_per_call([&] {
      y = x;
      kernels::softmax_rows(rows, rows, y.data());
    });
    char name[64];
    std::snprintf(name, sizeof(name), "softmax %dx%d", rows, rows);
    report(name, 3.0 * rows * rows, s, p);
  }
  return 0;
}
