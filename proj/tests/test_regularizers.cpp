#include <cmath>

#include <doctest.h>

#include "demr/regularizers.hpp"
#include "demr/rng.hpp"

using namespace demr;

TEST_CASE("evidence pair basics") {
  const NIGParams p1(0.4, 1.0, 1.5, 0.3);
  const EvidencePair a = evidence_pair(0.4, p1);
  CHECK(a.delta == 0.0);
  CHECK(a.phi == doctest::Approx(3.5));

  const NIGParams p2(0.5, 1.0, 1.5, 0.3);
  const EvidencePair b = evidence_pair(1.0, p2);
  CHECK(b.delta == doctest::Approx(0.5));
  CHECK(b.phi == doctest::Approx(3.5));

  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const NIGParams p(rng.uniform(-1, 1), rng.uniform(0.01, 4),
                      1.0 + rng.uniform(0.01, 4), rng.uniform(0.01, 4));
    CHECK(evidence_pair(rng.uniform(-1, 1), p).phi > 1.0);
  }
}

TEST_CASE("vanilla regularizer value and gradient") {
  const RegValueGrad zero = vanilla_regularizer({0.0, 3.5});
  CHECK(zero.value == 0.0);
  CHECK(zero.d_phi == 0.0);

  const RegValueGrad r = vanilla_regularizer({0.5, 3.5});
  CHECK(r.value == doctest::Approx(1.75));
  CHECK(r.d_phi == doctest::Approx(0.5));

  // minus gradient w.r.t. evidence is never positive
  for (int i = 0; i <= 20; ++i) {
    const double delta = i / 20.0;
    CHECK(-vanilla_regularizer({delta, 2.0}).d_phi <= 0.0);
  }
}

TEST_CASE("normalize_batch maps onto [0,1] by the max") {
  const std::vector<EvidencePair> pairs = {{0.0, 3.0}, {1.0, 3.0}, {2.0, 3.0}};
  const auto out = normalize_batch(pairs);
  CHECK(out[0].delta_bar == doctest::Approx(0.0));
  CHECK(out[1].delta_bar == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(out[2].delta_bar == doctest::Approx(1.0).epsilon(1e-5));

  const auto single = normalize_batch({{0.7, 2.0}});
  CHECK(single[0].delta_bar == doctest::Approx(1.0).epsilon(1e-5));

  const auto constant = normalize_batch({{1.0, 4.0}, {1.0, 4.0}, {1.0, 4.0}});
  for (const auto& np : constant) {
    CHECK(np.phi_bar == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(np.delta_bar == doctest::Approx(1.0).epsilon(1e-5));
  }

  CHECK_THROWS_AS(normalize_batch({}), ValidationError);
}

TEST_CASE("normalize_batch output always lands in [0,1]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvidencePair> pairs;
    const int n = rng.uniform_int(1, 12);
    for (int i = 0; i < n; ++i)
      pairs.push_back({rng.uniform(0.0, 5.0), rng.uniform(1.0, 9.0)});
    for (const auto& np : normalize_batch(pairs)) {
      CHECK(np.delta_bar >= 0.0);
      CHECK(np.delta_bar <= 1.0);
      CHECK(np.phi_bar >= 0.0);
      CHECK(np.phi_bar <= 1.0);
    }
  }
}

TEST_CASE("normalize_batch is idempotent up to the eps shift") {
  const std::vector<EvidencePair> pairs = {{0.2, 2.0}, {0.8, 5.0}, {0.5, 3.0}};
  const auto once = normalize_batch(pairs);
  std::vector<EvidencePair> as_pairs;
  for (const auto& np : once) as_pairs.push_back({np.delta_bar, np.phi_bar});
  const auto twice = normalize_batch(as_pairs);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(twice[i].delta_bar ==
          doctest::Approx(once[i].delta_bar).epsilon(1e-5));
    CHECK(twice[i].phi_bar == doctest::Approx(once[i].phi_bar).epsilon(1e-5));
  }
}

TEST_CASE("scaling a batch leaves the normalized errors unchanged") {
  const std::vector<double> deltas = {0.1, 0.4, 0.9, 0.25};
  for (double k : {0.5, 2.0, 17.0}) {
    std::vector<EvidencePair> base, scaled;
    for (double d : deltas) {
      base.push_back({d, 3.0});
      scaled.push_back({k * d, 3.0});
    }
    const auto nb = normalize_batch(base);
    const auto ns = normalize_batch(scaled);
    for (std::size_t i = 0; i < deltas.size(); ++i)
      CHECK(std::fabs(nb[i].delta_bar - ns[i].delta_bar) <= 1e-12);
  }
}

TEST_CASE("geom regularizer anchors and gradient") {
  CHECK(geom_regularizer({0.0, 1.0}).value == doctest::Approx(0.0));
  CHECK(geom_regularizer({1.0, 0.0}).value == doctest::Approx(0.0));

  const RegValueGrad g = geom_regularizer({0.3, 0.9});
  CHECK(g.value == doctest::Approx(0.04));
  CHECK(-g.d_phi == doctest::Approx(-0.4));
}

TEST_CASE("gradient field: vanilla is evidence-independent") {
  const auto field = sample_gradient_field(RegularizerMode::vanilla, 11);
  REQUIRE(field.size() == 121);
  for (std::size_t i = 0; i < field.size(); ++i) {
    CHECK(field[i].minus_grad == -field[i].delta);
    // same delta row: identical gradient across all phi
    CHECK(field[i].minus_grad == field[i - (i % 11)].minus_grad);
    CHECK(field[i].minus_grad <= 0.0);
  }
}

TEST_CASE("gradient field: geom sign matches the line side") {
  const auto field = sample_gradient_field(RegularizerMode::geom, 11);
  REQUIRE(field.size() == 121);
  for (std::size_t k = 0; k < field.size(); ++k) {
    const auto& p = field[k];
    const int side = 10 - static_cast<int>(k / 11) - static_cast<int>(k % 11);
    if (side > 0) CHECK(p.minus_grad > 0.0);
    if (side < 0) CHECK(p.minus_grad < 0.0);
    if (side == 0) CHECK(p.minus_grad == 0.0);
  }
  // the zero set is exactly the line
  for (int i = 0; i <= 10; ++i) {
    const double d = i / 10.0;
    const auto g = geom_regularizer({d, 1.0 - d});
    CHECK(std::fabs(g.d_phi) < 1e-12);
  }
}

TEST_CASE("gradient field validates its inputs") {
  CHECK_THROWS_AS(sample_gradient_field(RegularizerMode::geom, 1),
                  ValidationError);
  CHECK_THROWS_AS(sample_gradient_field(RegularizerMode::nll_only, 5),
                  ValidationError);
}

TEST_CASE("mode parsing round-trips") {
  for (const char* m : {"none", "nll_only", "vanilla", "geom"})
    CHECK(to_string(parse_regularizer_mode(m)) == m);
  CHECK_THROWS_AS(parse_regularizer_mode("bogus"), ValidationError);
}
