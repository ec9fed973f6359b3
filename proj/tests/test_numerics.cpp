#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "wv/autodiff.hpp"
#include "wv/kernels.hpp"
#include "wv/params.hpp"
#include "wv/rng.hpp"
#include "wv/tensor_io.hpp"

using namespace wv;
using wv::ad::Var;

TEST_CASE("rng: identical seeds and streams replay") {
  RandomStream a(7, 0), b(7, 0);
  auto ta = sample_normal(a, {4, 5});
  auto tb = sample_normal(b, {4, 5});
  CHECK(ta.bitwise_equal(tb));
  RandomStream c(7, 0);
  CHECK(c.uniform() == RandomStream(7, 0).uniform());
}

TEST_CASE("rng: normal moments over 1e5 draws") {
  RandomStream s(7, 3);
  auto t = sample_normal(s, {100000});
  const auto v = t.data<double>();
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= v.size();
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng: distinct streams are uncorrelated") {
  RandomStream s0(7, 0), s1(7, 1);
  auto a = sample_normal(s0, {10000}).to_f64();
  auto b = sample_normal(s1, {10000}).to_f64();
  CHECK(std::abs(test::pearson(a, b)) < 0.05);
}

TEST_CASE("rng: uniform range and chi-square") {
  RandomStream s(11, 0);
  auto u = sample_uniform(s, {100000}).to_f64();
  std::vector<double> counts(10, 0.0);
  for (double x : u) {
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    counts[static_cast<int>(x * 10)] += 1;
  }
  CHECK(test::chi_square_uniform(counts) < 27.88);
}

TEST_CASE("rng: zero extent is rejected") {
  RandomStream s(1, 0);
  CHECK_THROWS_AS(sample_normal(s, {3, 0}), ContractError);
  CHECK_THROWS_AS(sample_uniform(s, {}), ContractError);
}

TEST_CASE("rng: split does not advance the parent") {
  RandomStream s(5, 9);
  auto child = s.split(2);
  CHECK(s.counter() == 0);
  CHECK(child.stream_id() != s.stream_id());
  CHECK(child.uniform() != s.uniform());
}

TEST_CASE("wvt: header bytes for float32 [2,3]") {
  auto t = Tensor::f32({2, 3}, {1, 2, 3, 4, 5, 6});
  auto bytes = encode_wvt(t);
  REQUIRE(bytes.size() == 8 + 8 + 24);
  CHECK(std::string(reinterpret_cast<const char*>(bytes.data()), 4) == "WVT1");
  CHECK(static_cast<int>(bytes[4]) == 0);
  CHECK(static_cast<int>(bytes[5]) == 2);
  CHECK(static_cast<int>(bytes[6]) == 0);
  CHECK(static_cast<int>(bytes[7]) == 0);
  CHECK(static_cast<int>(bytes[8]) == 2);
  CHECK(static_cast<int>(bytes[9]) == 0);
  CHECK(static_cast<int>(bytes[12]) == 3);
}

TEST_CASE("wvt: roundtrip every dtype through a file") {
  auto dir = test::temp_dir("wvt");
  RandomStream s(3, 0);
  std::vector<Tensor> ts = {sample_normal(s, {3, 4, 5}), sample_normal(s, {7}).as(DType::kFloat32),
                            Tensor::u8({2, 2}, {0, 7, 200, 255})};
  for (std::size_t i = 0; i < ts.size(); ++i) {
    auto p = dir / ("t" + std::to_string(i) + ".wvt");
    write_tensor(ts[i], p);
    CHECK(read_tensor(p).bitwise_equal(ts[i]));
  }
}

TEST_CASE("wvt: distinct failure kinds") {
  auto good = encode_wvt(Tensor::f64({2}, {1.0, 2.0}));
  auto expect = [](std::vector<std::byte> b, TensorIoFailure f) {
    try {
      decode_wvt(b);
      FAIL("expected a decode error");
    } catch (const TensorIoError& e) {
      CHECK(e.failure() == f);
    }
  };
  auto bad_magic = good;
  for (int i = 0; i < 4; ++i) bad_magic[i] = std::byte{'X'};
  expect(bad_magic, TensorIoFailure::kBadMagic);
  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  expect(truncated, TensorIoFailure::kTruncated);
  auto bad_dtype = good;
  bad_dtype[4] = std::byte{3};
  expect(bad_dtype, TensorIoFailure::kBadDType);
  try {
    read_tensor("/nonexistent/dir/x.wvt");
    FAIL("expected open failure");
  } catch (const TensorIoError& e) {
    CHECK(e.failure() == TensorIoFailure::kOpen);
  }
}

TEST_CASE("checked mode traps non-finite values") {
  test::CheckedScope on(true);
  CHECK_THROWS_AS(Var::constant({1}, {std::nan("")}), NumericError);
  Var a = Var::constant({1}, {1e308});
  CHECK_THROWS_AS(ad::scale(a, 10.0), NumericError);
}

TEST_CASE("gradcheck: sum of squares of [1,2,3]") {
  Var p = Var::parameter({3}, {1, 2, 3});
  auto loss = [&] { return ad::sum(ad::square(p)); };
  auto rep = finite_diff_gradcheck(loss, {{"p", p}}, 1e-4);
  p.zero_grad();
  ad::backward(loss());
  CHECK(rep.max_rel_error < 1e-9);
  CHECK(p.grad()[0] == doctest::Approx(2.0));
  CHECK(p.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("gradient_rel_error definition") {
  CHECK(gradient_rel_error(1.0, 1.0) == 0.0);
  CHECK(gradient_rel_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(gradient_rel_error(0.0, 0.0) == 0.0);
  CHECK(gradient_rel_error(1e-9, 0.0) == doctest::Approx(0.1));
}

namespace {

Var rand_param(RandomStream& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = scale * rng.normal();
  return Var::parameter(std::move(shape), std::move(v));
}

// Contracts `out` with a fixed random tensor so every output element matters.
Var probe(const Var& out, std::uint64_t seed = 99) {
  RandomStream rng(seed, 1);
  std::vector<double> w(static_cast<std::size_t>(out.numel()));
  for (auto& x : w) x = rng.normal();
  return ad::sum(ad::mul(out, Var::constant(out.shape(), std::move(w))));
}

void expect_gradcheck(const std::function<Var()>& f, const std::vector<std::pair<std::string, Var>>& ps) {
  auto rep = finite_diff_gradcheck(f, ps, 1e-5);
  INFO("worst " << rep.worst_param << "[" << rep.worst_index << "] analytic " << rep.worst_analytic << " numeric "
                << rep.worst_numeric);
  CHECK(rep.max_rel_error < 1e-6);
}

}  // namespace

TEST_CASE("gradcheck: element-wise and shape ops") {
  RandomStream rng(21, 0);
  Var a = rand_param(rng, {3, 4}), b = rand_param(rng, {3, 4});
  expect_gradcheck([&] { return probe(ad::add(ad::mul(a, b), ad::sub(a, ad::scale(b, 0.3)))); }, {{"a", a}, {"b", b}});
  expect_gradcheck([&] { return probe(ad::silu(a)); }, {{"a", a}});
  expect_gradcheck([&] { return probe(ad::sigmoid(a)); }, {{"a", a}});
  expect_gradcheck([&] { return probe(ad::transpose(a)); }, {{"a", a}});
  expect_gradcheck([&] { return probe(ad::concat0({ad::slice0(a, 1, 3), b})); }, {{"a", a}, {"b", b}});
  expect_gradcheck([&] { return probe(ad::take_row(a, 2)); }, {{"a", a}});
  expect_gradcheck([&] { return ad::mean(ad::square(ad::reshape(a, {12}))); }, {{"a", a}});
  expect_gradcheck([&] { return ad::sum_sq_diff(a, b); }, {{"a", a}, {"b", b}});
}

TEST_CASE("gradcheck: dense ops") {
  RandomStream rng(22, 0);
  Var x = rand_param(rng, {5, 6}), w = rand_param(rng, {6, 4}), bias = rand_param(rng, {4});
  Var sh = rand_param(rng, {6}, 0.3), sc = rand_param(rng, {6}, 0.3), y = rand_param(rng, {5, 6});
  expect_gradcheck([&] { return probe(ad::linear(x, w, bias)); }, {{"x", x}, {"w", w}, {"b", bias}});
  expect_gradcheck([&] { return probe(ad::layer_norm(x)); }, {{"x", x}});
  expect_gradcheck([&] { return probe(ad::modulate(x, sh, sc)); }, {{"x", x}, {"sh", sh}, {"sc", sc}});
  expect_gradcheck([&] { return probe(ad::gated_residual(x, sh, y)); }, {{"x", x}, {"g", sh}, {"y", y}});
  expect_gradcheck([&] { return probe(ad::add_row(x, sc)); }, {{"x", x}, {"v", sc}});
}

TEST_CASE("gradcheck: multi-head attention") {
  RandomStream rng(23, 0);
  Var q = rand_param(rng, {5, 8}), k = rand_param(rng, {7, 8}), v = rand_param(rng, {7, 8});
  expect_gradcheck([&] { return probe(ad::attention(q, k, v, 2)); }, {{"q", q}, {"k", k}, {"v", v}});
}

TEST_CASE("attention weights sum to one per query") {
  RandomStream rng(24, 0);
  Var q = rand_param(rng, {6, 8}), k = rand_param(rng, {9, 8}), v = rand_param(rng, {9, 8});
  std::vector<double> probs;
  ad::attention(q, k, v, 4, &probs);
  REQUIRE(probs.size() == 4u * 6 * 9);
  for (int r = 0; r < 24; ++r) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) s += probs[r * 9 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("gradcheck: volumetric ops") {
  RandomStream rng(25, 0);
  Var x = rand_param(rng, {2, 4, 4, 4}), w3 = rand_param(rng, {3, 2, 3, 3, 3}, 0.3), b3 = rand_param(rng, {3});
  expect_gradcheck([&] { return probe(ad::conv3d(x, w3, b3, 1, 1)); }, {{"x", x}, {"w", w3}, {"b", b3}});
  Var w2 = rand_param(rng, {3, 2, 2, 2, 2}, 0.3);
  expect_gradcheck([&] { return probe(ad::conv3d(x, w2, b3, 2, 0)); }, {{"x", x}, {"w", w2}, {"b", b3}});
  Var w1 = rand_param(rng, {3, 2, 1, 1, 1});
  expect_gradcheck([&] { return probe(ad::conv3d(x, w1, b3, 1, 0)); }, {{"x", x}, {"w", w1}, {"b", b3}});
  Var wt = rand_param(rng, {2, 3, 2, 2, 2}, 0.3);
  expect_gradcheck([&] { return probe(ad::conv_transpose3d_k2s2(x, wt, b3)); }, {{"x", x}, {"w", wt}, {"b", b3}});
  Var alpha = rand_param(rng, {64}, 0.3), y = rand_param(rng, {2, 4, 4, 4});
  expect_gradcheck([&] { return probe(ad::convex_mix(alpha, x, y)); }, {{"alpha", alpha}, {"x", x}, {"y", y}});
  Var odd = rand_param(rng, {2, 3, 4, 5});
  expect_gradcheck([&] { return probe(ad::haar3d(ad::pad_replicate_even(odd))); }, {{"odd", odd}});
}

TEST_CASE("conv kernels agree with the direct reference") {
  RandomStream rng(26, 0);
  const kernels::Conv3dGeom g{3, 5, 6, 7, 3, 1, 1};
  auto x = sample_normal(rng, {3, 5, 6, 7}).to_f64();
  auto w = sample_normal(rng, {4, 3, 3, 3, 3}).to_f64();
  std::vector<double> bias = {0.1, -0.2, 0.3, 0.0};
  std::vector<double> ref(4 * g.col_cols());
  kernels::reference::conv3d(g, 4, x.data(), w.data(), bias.data(), ref.data());
  Var y = ad::conv3d(Var::constant({3, 5, 6, 7}, x), Var::constant({4, 3, 3, 3, 3}, w), Var::constant({4}, bias), 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.value()[i] - ref[i]) < 1e-12);
}

TEST_CASE("kernels are bitwise independent of thread count") {
  RandomStream rng(27, 0);
  const int m = 37, n = 29, k = 41;
  auto a = sample_normal(rng, {m, k}).to_f64();
  auto b = sample_normal(rng, {k, n}).to_f64();
  std::vector<double> c1(m * n), c4(m * n), cref(m * n);
  const int saved = kernels::max_threads();
  kernels::set_threads(1);
  kernels::gemm_nn(m, n, k, a.data(), b.data(), c1.data(), false);
  kernels::set_threads(4);
  kernels::gemm_nn(m, n, k, a.data(), b.data(), c4.data(), false);
  kernels::set_threads(saved);
  CHECK(std::memcmp(c1.data(), c4.data(), c1.size() * sizeof(double)) == 0);
  kernels::reference::gemm_nn(m, n, k, a.data(), b.data(), cref.data(), false);
  for (int i = 0; i < m * n; ++i) CHECK(std::abs(c1[i] - cref[i]) < 1e-12);

  std::vector<double> s1(a), s4(a), sref(a);
  kernels::set_threads(1);
  kernels::softmax_rows(m, k, s1.data());
  kernels::set_threads(4);
  kernels::softmax_rows(m, k, s4.data());
  kernels::set_threads(saved);
  kernels::reference::softmax_rows(m, k, sref.data());
  CHECK(std::memcmp(s1.data(), s4.data(), s1.size() * sizeof(double)) == 0);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(std::abs(s1[i] - sref[i]) < 1e-14);
}

TEST_CASE("no-grad guard records no history") {
  Var p = Var::parameter({2}, {1, 2});
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::square(p).requires_grad());
  }
  CHECK(ad::square(p).requires_grad());
}

TEST_CASE("AdamW: single scalar matches the hand-stepped recurrence") {
  ParamStore ps;
  Var p = ps.add("p", {1}, {1.0});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  double m = 0, v = 0, ref = 1.0;
  for (int t = 1; t <= 3; ++t) {
    ps.zero_grad();
    p.node()->ensure_grad()[0] = 0.5;
    opt.step(ps);
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref -= 1e-4 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value()[0] == doctest::Approx(ref).epsilon(1e-14));
  }
  // First step moves by lr * 0.5 / (sqrt(0.25) + eps) ~= lr.
  CHECK(1.0 - ref == doctest::Approx(3e-4).epsilon(1e-6));
}

TEST_CASE("AdamW: zero gradient and no decay leaves parameters unchanged") {
  ParamStore ps;
  Var p = ps.add("p", {3}, {1.0, -2.0, 0.5});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  p.node()->ensure_grad();
  opt.step(ps);
  CHECK(p.value()[0] == 1.0);
  CHECK(p.value()[1] == -2.0);
  CHECK(p.value()[2] == 0.5);
}

TEST_CASE("AdamW: parameters without gradient are skipped; decay is decoupled") {
  ParamStore ps;
  Var a = ps.add("a", {1}, {2.0});
  Var b = ps.add("b", {1}, {3.0});
  AdamW opt;  // wd 0.01
  a.node()->ensure_grad()[0] = 0.0;
  opt.step(ps);
  CHECK(a.value()[0] == doctest::Approx(2.0 * (1 - 1e-4 * 0.01)).epsilon(1e-15));
  CHECK(b.value()[0] == 3.0);
  auto state = opt.state_tensors();
  CHECK(state.count("m.a") == 1);
  CHECK(state.count("m.b") == 0);
}
