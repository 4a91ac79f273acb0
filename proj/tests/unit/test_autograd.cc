#include <doctest.h>

#include <functional>
#include <random>

#include "../support/oracles.h"
#include "gebc/autograd.h"
#include "gebc/nn.h"

using namespace gebc;
using ag::Matrix;
using ag::Var;

namespace {

Var random_var(std::mt19937_64& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return Var(m, true);
}

// Checks d(sum(w .* f(inputs)))/d(input) for every input against central
// differences; the fixed random weights w make the scalar sensitive to
// every output entry.
void gradcheck(const std::vector<Var>& inputs, const std::function<Var()>& f,
               double tol = 1e-6) {
  std::mt19937_64 rng(123);
  const Var probe = f();
  const Var w = random_var(rng, static_cast<int>(probe.rows()), static_cast<int>(probe.cols()));
  const Var wc = ag::constant(w.value());
  auto loss = [&] { return ag::sum_all(ag::mul(f(), wc)); };
  for (auto v : inputs) v.zero_grad();
  loss().backward();
  for (const auto& v : inputs) {
    const Matrix numeric = oracle::numeric_gradient(v, [&] { return loss().scalar(); }, 1e-5);
    CHECK(oracle::relative_error(v.grad(), numeric) <= tol);
  }
}

}  // namespace

TEST_CASE("elementwise and matrix ops") {
  std::mt19937_64 rng(1);
  Var a = random_var(rng, 3, 4), b = random_var(rng, 3, 4), c = random_var(rng, 4, 2);
  Var row = random_var(rng, 1, 4);
  gradcheck({a, c}, [&] { return ag::matmul(a, c); });
  gradcheck({a, b}, [&] { return ag::add(a, b); });
  gradcheck({a, b}, [&] { return ag::sub(a, b); });
  gradcheck({a, b}, [&] { return ag::mul(a, b); });
  gradcheck({a}, [&] { return ag::scale(a, -2.5); });
  gradcheck({a, row}, [&] { return ag::add_row(a, row); });
  gradcheck({a, row}, [&] { return ag::mul_row(a, row); });
  gradcheck({a}, [&] { return ag::transpose(a); });
  gradcheck({a}, [&] { return ag::gelu(a); });
}

TEST_CASE("normalisation ops") {
  std::mt19937_64 rng(2);
  Var a = random_var(rng, 4, 5, -2, 2);
  gradcheck({a}, [&] { return ag::softmax_rows(a); });
  Var sq = random_var(rng, 4, 4, -2, 2);
  gradcheck({sq}, [&] { return ag::softmax_rows(sq, true); });
  gradcheck({a}, [&] { return ag::layer_norm_rows(a); }, 1e-5);

  const Matrix s = ag::softmax_rows(a).value();
  for (Eigen::Index r = 0; r < s.rows(); ++r) CHECK(s.row(r).sum() == doctest::Approx(1.0));
  const Matrix causal = ag::softmax_rows(sq, true).value();
  CHECK(causal(0, 1) == 0.0);
  CHECK(causal(0, 0) == doctest::Approx(1.0));
  const Matrix ln = ag::layer_norm_rows(a).value();
  for (Eigen::Index r = 0; r < ln.rows(); ++r) CHECK(std::abs(ln.row(r).mean()) < 1e-12);
}

TEST_CASE("encoding ops") {
  std::mt19937_64 rng(3);
  Var p = random_var(rng, 2, 2, 0.05, 0.95);
  gradcheck({p}, [&] { return ag::logit(p); });
  Var x = random_var(rng, 2, 2, -3, 3);
  gradcheck({x}, [&] { return ag::sinusoidal_encode(x, 8, 10000.0); });
  const Matrix e = ag::sinusoidal_encode(ag::constant(Matrix{{0.0}}), 4, 10000.0).value();
  CHECK(e(0, 0) == 0.0);
  CHECK(e(0, 1) == 1.0);
}

TEST_CASE("structural ops") {
  std::mt19937_64 rng(4);
  Var a = random_var(rng, 3, 2), b = random_var(rng, 2, 2), c = random_var(rng, 3, 3);
  gradcheck({a, b}, [&] {
    const std::vector<Var> parts{a, b};
    return ag::concat_rows(parts);
  });
  gradcheck({a, c}, [&] {
    const std::vector<Var> parts{a, c};
    return ag::concat_cols(parts);
  });
  gradcheck({c}, [&] { return ag::slice_rows(c, 1, 2); });
  gradcheck({c}, [&] { return ag::slice_cols(c, 1, 2); });
  Var table = random_var(rng, 5, 3);
  const std::vector<int> ids{4, 0, 4, 2};
  gradcheck({table}, [&] { return ag::gather_rows(table, ids); });
  gradcheck({a}, [&] { return ag::repeat_rows_each(a, 3); });
  CHECK(ag::repeat_rows_each(a, 2).value().row(1) == a.value().row(0));
}

TEST_CASE("cross entropy equals per-row negative log-softmax") {
  std::mt19937_64 rng(5);
  Var logits = random_var(rng, 5, 7, -3, 3);
  const std::vector<int> targets{3, -1, 0, 6, -1};
  const Var ce = ag::cross_entropy(logits, targets);
  double want = 0.0;
  for (int r : {0, 2, 3}) {
    double z = 0.0;
    for (int k = 0; k < 7; ++k) z += std::exp(logits.value()(r, k));
    want += -(logits.value()(r, targets[r]) - std::log(z));
  }
  CHECK(ce.scalar() == doctest::Approx(want / 3).epsilon(1e-12));
  gradcheck({logits}, [&] { return ag::cross_entropy(logits, targets); });
  gradcheck({logits}, [&] { return ag::mean_all(logits); });
}

TEST_CASE("constants carry no graph and leaf gradients accumulate") {
  std::mt19937_64 rng(6);
  Var a = random_var(rng, 2, 2);
  const Var k = ag::constant(Matrix::Ones(2, 2));
  CHECK_FALSE(ag::mul(k, k).requires_grad());
  ag::sum_all(ag::mul(a, k)).backward();
  ag::sum_all(ag::mul(a, k)).backward();
  CHECK(a.grad() == Matrix::Constant(2, 2, 2.0));
  a.zero_grad();
  CHECK_FALSE(a.has_grad());
}

TEST_CASE("nn modules") {
  nn::Initializer init(7);
  nn::Linear lin(4, 3, init, true);
  nn::ParameterList params;
  lin.collect("lin", params);
  REQUIRE(params.size() == 2);
  CHECK(params[0].decay);
  CHECK_FALSE(params[1].decay);
  nn::LayerNorm ln(4, init, true);
  params.clear();
  ln.collect("ln", params);
  for (const auto& p : params) CHECK_FALSE(p.decay);

  std::mt19937_64 rng(8);
  Var x = random_var(rng, 3, 4);
  Var ctx = random_var(rng, 5, 4);
  nn::MultiHeadAttention attn(4, 4, 2, init, true);
  gradcheck({x, ctx}, [&] { return attn.forward(x, ctx); }, 1e-5);
  nn::FeedForward ff(4, 8, init, true);
  gradcheck({x}, [&] { return ff.forward(x); }, 1e-5);
  nn::Linear frozen(4, 2, init, false);
  CHECK_FALSE(frozen.weight().requires_grad());
  CHECK(nn::checksum(params) == nn::checksum(params));
}
