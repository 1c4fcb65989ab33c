#include <cmath>

#include <doctest.h>

#include "demr/autodiff.hpp"
#include "demr/rng.hpp"

using namespace demr;

namespace {

Tensor2D random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& x : t.data) x = scale * rng.uniform(-1.0, 1.0);
  return t;
}

// finite differences over every named parameter against the analytic grads
double max_rel_err(ParamStore& store, const std::function<double(bool)>& loss,
                   double h = 1e-5) {
  return grad_check(store, loss, h, 1e-4).max_rel_err;
}

}  // namespace

TEST_CASE("affine with identity weights is the identity map") {
  ParamStore store;
  store.add("w", 3, 3).value = Tensor2D::identity(3);
  store.add("b", 1, 3);
  Tape t(&store);
  Rng rng(1);
  const Tensor2D x = random_tensor(4, 3, rng);
  const int y = t.affine(t.input(x), t.param("w"), t.param("b"));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) CHECK(t.value(y).at(i, j) == x.at(i, j));
}

TEST_CASE("affine broadcasts the bias over zero input") {
  ParamStore store;
  store.add("w", 3, 2);
  auto& b = store.add("b", 1, 2);
  b.value.at(0, 0) = 1.5;
  b.value.at(0, 1) = -0.5;
  Tape t(&store);
  const int y = t.affine(t.input(Tensor2D(4, 3)), t.param("w"), t.param("b"));
  for (int i = 0; i < 4; ++i) {
    CHECK(t.value(y).at(i, 0) == 1.5);
    CHECK(t.value(y).at(i, 1) == -0.5);
  }
}

TEST_CASE("affine shape mismatch names both shapes") {
  ParamStore store;
  store.add("w", 3, 2);
  store.add("b", 1, 2);
  Tape t(&store);
  CHECK_THROWS_WITH_AS(
      t.affine(t.input(Tensor2D(4, 5)), t.param("w"), t.param("b")),
      doctest::Contains("4x5"), ValidationError);
}

TEST_CASE("affine gradient matches finite differences") {
  ParamStore store;
  Rng rng(2);
  store.add("w", 3, 2).value = random_tensor(3, 2, rng);
  store.add("b", 1, 2).value = random_tensor(1, 2, rng);
  const Tensor2D x = random_tensor(4, 3, rng);
  auto loss = [&](bool with_grad) {
    Tape t(&store);
    const int y = t.affine(t.input(x), t.param("w"), t.param("b"));
    // smooth_l1 against zero targets is 0.5*y^2 near the origin, so every
    // coordinate receives a distinct gradient
    std::vector<double> zeros(t.value(y).size(), 0.0);
    const int l = t.smooth_l1_rows_mean(y, zeros, {0, 1, 2, 3});
    if (with_grad) t.backward(l);
    return t.scalar_value(l);
  };
  CHECK(max_rel_err(store, loss) <= 1e-4);
}

TEST_CASE("softmax rows: symmetry, stability, shift invariance") {
  Tape t;
  Tensor2D x(3, 2);
  x.at(0, 0) = 0.0;
  x.at(0, 1) = 0.0;
  x.at(1, 0) = 1000.0;
  x.at(1, 1) = 0.0;
  x.at(2, 0) = 3.25;
  x.at(2, 1) = -1.5;
  const int y = t.softmax_rows(t.input(x));
  CHECK(t.value(y).at(0, 0) == doctest::Approx(0.5));
  CHECK(t.value(y).at(0, 1) == doctest::Approx(0.5));
  CHECK(t.value(y).at(1, 0) == doctest::Approx(1.0));
  CHECK(t.value(y).at(1, 1) == doctest::Approx(0.0));
  for (int r = 0; r < 3; ++r)
    CHECK(t.value(y).at(r, 0) + t.value(y).at(r, 1) == doctest::Approx(1.0));

  Tensor2D shifted = x;
  for (int c = 0; c < 2; ++c) shifted.at(2, c) += 7.5;
  Tape t2;
  const int y2 = t2.softmax_rows(t2.input(shifted));
  for (int c = 0; c < 2; ++c)
    CHECK(std::fabs(t2.value(y2).at(2, c) - t.value(y).at(2, c)) <= 1e-12);
}

TEST_CASE("attention with a single key returns that value row everywhere") {
  ParamStore store;
  Rng rng(3);
  const int d = 4;
  store.add("wq", d, d).value = random_tensor(d, d, rng);
  store.add("wk", d, d).value = random_tensor(d, d, rng);
  store.add("wv", d, d).value = random_tensor(d, d, rng);
  Tape t(&store);
  const Tensor2D q = random_tensor(5, d, rng);
  const Tensor2D kv = random_tensor(1, d, rng);
  const int out = t.attention(t.input(q), t.input(kv), t.param("wq"),
                              t.param("wk"), t.param("wv"));
  const int vproj = t.matmul(t.input(kv), t.param("wv"));
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < d; ++c)
      CHECK(t.value(out).at(i, c) == doctest::Approx(t.value(vproj).at(0, c)));
}

TEST_CASE("attention over identical keys/values returns that value") {
  ParamStore store;
  Rng rng(4);
  const int d = 4;
  store.add("wq", d, d).value = random_tensor(d, d, rng);
  store.add("wk", d, d).value = random_tensor(d, d, rng);
  store.add("wv", d, d).value = random_tensor(d, d, rng);
  Tape t(&store);
  Tensor2D kv(2, d);
  for (int c = 0; c < d; ++c) {
    kv.at(0, c) = 0.3 * c - 0.5;
    kv.at(1, c) = kv.at(0, c);
  }
  const Tensor2D q = random_tensor(3, d, rng);
  const int out = t.attention(t.input(q), t.input(kv), t.param("wq"),
                              t.param("wk"), t.param("wv"));
  const int vproj = t.matmul(t.input(kv), t.param("wv"));
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < d; ++c)
      CHECK(t.value(out).at(i, c) ==
            doctest::Approx(t.value(vproj).at(0, c)).epsilon(1e-12));
}

TEST_CASE("attention rows stay inside the value envelope") {
  ParamStore store;
  Rng rng(5);
  const int d = 6;
  store.add("wq", d, d).value = random_tensor(d, d, rng);
  store.add("wk", d, d).value = random_tensor(d, d, rng);
  // identity value projection so the envelope is over the raw rows
  store.add("wv", d, d).value = Tensor2D::identity(d);
  Tape t(&store);
  const Tensor2D q = random_tensor(4, d, rng);
  const Tensor2D kv = random_tensor(7, d, rng);
  const int out = t.attention(t.input(q), t.input(kv), t.param("wq"),
                              t.param("wk"), t.param("wv"));
  for (int c = 0; c < d; ++c) {
    double lo = kv.at(0, c), hi = kv.at(0, c);
    for (int r = 1; r < 7; ++r) {
      lo = std::min(lo, kv.at(r, c));
      hi = std::max(hi, kv.at(r, c));
    }
    for (int r = 0; r < 4; ++r) {
      CHECK(t.value(out).at(r, c) >= lo - 1e-12);
      CHECK(t.value(out).at(r, c) <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention gradients match finite differences") {
  ParamStore store;
  Rng rng(6);
  const int d = 3;
  store.add("q", 3, d).value = random_tensor(3, d, rng);
  store.add("kv", 4, d).value = random_tensor(4, d, rng);
  store.add("wq", d, d).value = random_tensor(d, d, rng);
  store.add("wk", d, d).value = random_tensor(d, d, rng);
  store.add("wv", d, d).value = random_tensor(d, d, rng);
  auto loss = [&](bool with_grad) {
    Tape t(&store);
    const int out = t.attention(t.param("q"), t.param("kv"), t.param("wq"),
                                t.param("wk"), t.param("wv"));
    std::vector<double> targets(t.value(out).size(), 0.3);
    std::vector<int> rows = {0, 1, 2};
    const int l = t.smooth_l1_rows_mean(out, targets, rows);
    if (with_grad) t.backward(l);
    return t.scalar_value(l);
  };
  CHECK(max_rel_err(store, loss) <= 1e-4);
}

TEST_CASE("mixed op gradients: tanh, softplus, concat, mean, tile, gather") {
  ParamStore store;
  Rng rng(7);
  store.add("a", 4, 3).value = random_tensor(4, 3, rng);
  store.add("b", 2, 3).value = random_tensor(2, 3, rng);
  store.add("w", 6, 2).value = random_tensor(6, 2, rng);
  store.add("bias", 1, 2).value = random_tensor(1, 2, rng);
  auto loss = [&](bool with_grad) {
    Tape t(&store);
    const int a = t.tanh_op(t.param("a"));
    const int pooled = t.mean_rows(t.softplus_op(t.param("b")));
    const int tiled = t.tile_rows(pooled, 4);
    const int cat = t.concat_cols(a, tiled);  // 4 x 6
    const int y = t.affine(cat, t.param("w"), t.param("bias"));
    const int picked = t.gather_rows(y, {0, 2, 2, 3});
    std::vector<double> targets(t.value(picked).size(), -0.1);
    const int l = t.smooth_l1_rows_mean(picked, targets, {0, 1, 2, 3});
    if (with_grad) t.backward(l);
    return t.scalar_value(l);
  };
  CHECK(max_rel_err(store, loss) <= 1e-4);
}

TEST_CASE("cross entropy and bce gradients match finite differences") {
  ParamStore store;
  Rng rng(8);
  store.add("logits", 3, 5).value = random_tensor(3, 5, rng);
  store.add("z", 6, 1).value = random_tensor(6, 1, rng);
  const std::vector<int> targets = {1, 4, 0};
  const std::vector<double> bce_t = {1, 0, 0, 1, 1, 0};
  auto loss = [&](bool with_grad) {
    Tape t(&store);
    const int ce = t.cross_entropy_rows_mean(t.param("logits"), targets);
    const int bce = t.bce_with_logits_mean(t.param("z"), bce_t);
    const int l = t.weighted_sum({ce, bce}, {1.0, 0.7});
    if (with_grad) t.backward(l);
    return t.scalar_value(l);
  };
  CHECK(max_rel_err(store, loss) <= 1e-4);
}

TEST_CASE("giou and evidential tape terms match finite differences") {
  ParamStore store;
  Rng rng(9);
  auto& off = store.add("off", 5, 2);
  for (double& x : off.value.data) x = rng.uniform(0.05, 0.3);
  store.add("raw", 5, 8).value = random_tensor(5, 8, rng);
  std::vector<double> centers;
  for (int i = 0; i < 5; ++i) centers.push_back((i + 0.5) / 5.0);
  const std::vector<int> rows = {1, 2, 3};
  for (auto term : {Tape::EvTerm::nll, Tape::EvTerm::vanilla_reg,
                    Tape::EvTerm::geom_reg}) {
    auto loss = [&](bool with_grad) {
      Tape t(&store);
      const int g = t.giou_span_rows_mean(t.param("off"), centers, 0.25, 0.72,
                                          rows);
      const int ev = t.evidential_rows_sum(t.param("raw"), rows, 0.25, 0.72,
                                           term, 0.8, 5.0);
      const int l = t.weighted_sum({g, ev}, {1.0, 0.05});
      if (with_grad) t.backward(l);
      return t.scalar_value(l);
    };
    CHECK(max_rel_err(store, loss) <= 1e-4);
  }
}

TEST_CASE("stop_gradient blocks the backward path") {
  ParamStore store;
  Rng rng(10);
  store.add("x", 2, 2).value = random_tensor(2, 2, rng);
  Tape t(&store);
  const int frozen = t.stop_gradient(t.param("x"));
  std::vector<double> targets(4, 0.0);
  const int l = t.smooth_l1_rows_mean(frozen, targets, {0, 1});
  store.zero_grads();
  t.backward(l);
  for (double gv : store.at("x").grad.data) CHECK(gv == 0.0);
}

TEST_CASE("adam first step moves by about -lr in the gradient direction") {
  ParamStore store;
  auto& e = store.add("x", 1, 1);
  e.value.at(0, 0) = 2.0;
  e.grad.at(0, 0) = 0.37;  // any nonzero gradient
  store.adam_step(0.01);
  CHECK(e.value.at(0, 0) == doctest::Approx(2.0 - 0.01).epsilon(1e-5));
  CHECK(e.grad.at(0, 0) == 0.0);

  // zero gradient on a fresh parameter: no movement
  ParamStore store2;
  auto& f = store2.add("y", 1, 1);
  f.value.at(0, 0) = -1.0;
  store2.adam_step(0.01);
  CHECK(f.value.at(0, 0) == -1.0);
}

TEST_CASE("adam runs are bit-identical across repeats") {
  auto run = [&]() {
    ParamStore store;
    Rng rng(77);
    store.add("w", 4, 4).value = random_tensor(4, 4, rng);
    store.add("b", 1, 4);
    const Tensor2D x = random_tensor(3, 4, rng);
    for (int step = 0; step < 100; ++step) {
      Tape t(&store);
      const int y = t.tanh_op(t.affine(t.input(x), t.param("w"), t.param("b")));
      std::vector<double> targets(t.value(y).size(), 0.2);
      const int l = t.smooth_l1_rows_mean(y, targets, {0, 1, 2});
      store.zero_grads();
      t.backward(l);
      store.adam_step(1e-3);
    }
    return store.at("w").value;
  };
  const Tensor2D a = run();
  const Tensor2D b = run();
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("grad_check passes a quadratic and flags a corrupted gradient") {
  ParamStore store;
  store.add("x", 1, 1).value.at(0, 0) = 3.0;
  auto loss = [&](bool with_grad) {
    const double x = store.at("x").value.at(0, 0);
    if (with_grad) store.at("x").grad.at(0, 0) += 2.0 * x;
    return x * x;
  };
  const auto report = grad_check(store, loss, 1e-5, 1e-6);
  CHECK(report.pass);
  CHECK(report.max_rel_err <= 1e-6);

  const auto corrupted = grad_check(store, loss, 1e-5, 1e-6, "x");
  CHECK_FALSE(corrupted.pass);
}

TEST_CASE("grad_check reports the kink of |x| at zero as a failure") {
  ParamStore store;
  store.add("x", 1, 1).value.at(0, 0) = 0.0;
  auto loss = [&](bool with_grad) {
    const double x = store.at("x").value.at(0, 0);
    if (with_grad)
      store.at("x").grad.at(0, 0) += x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    return std::fabs(x);
  };
  const auto report = grad_check(store, loss, 1e-5, 1e-4);
  CHECK_FALSE(report.pass);
}

TEST_CASE("frozen parameters are untouched by adam") {
  ParamStore store;
  auto& e = store.add("qr.w", 2, 2);
  e.value.fill(0.5);
  e.grad.fill(1.0);
  store.set_trainable_prefix("qr.", false);
  store.adam_step(0.1);
  for (double v : e.value.data) CHECK(v == 0.5);
  for (double gv : e.grad.data) CHECK(gv == 0.0);
}
