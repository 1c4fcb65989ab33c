#include <cmath>

#include <doctest.h>

#include "demr/fusion.hpp"
#include "demr/rng.hpp"

using namespace demr;

namespace {

Tensor2D random_tensor(int r, int c, Rng& rng) {
  Tensor2D t(r, c);
  for (double& x : t.data) x = rng.uniform(-1.0, 1.0);
  return t;
}

ParamStore make_store(int d, int layers, std::uint64_t seed) {
  ParamStore store;
  add_rff_params(store, d, layers);
  store.init_xavier(seed);
  return store;
}

}  // namespace

TEST_CASE("rff layer preserves shapes and stacking composes") {
  const int d = 6;
  ParamStore store = make_store(d, 3, 21);
  Rng rng(22);
  const Tensor2D video = random_tensor(7, d, rng);
  const Tensor2D text = random_tensor(4, d, rng);

  Tape t(&store);
  const FusionState out =
      rff_stack(t, t.input(video), t.input(text), 3);
  CHECK(t.value(out.video).rows == 7);
  CHECK(t.value(out.video).cols == d);
  CHECK(t.value(out.text).rows == 4);
  CHECK(t.value(out.text).cols == d);
  CHECK(out.layer_index == 3);

  // n = 1 equals a single layer application
  Tape t1(&store);
  const FusionState s1 =
      rff_stack(t1, t1.input(video), t1.input(text), 1);
  Tape t2(&store);
  const FusionState s2 =
      rff_layer(t2, {t2.input(video), t2.input(text), 0});
  for (std::size_t i = 0; i < t1.value(s1.video).data.size(); ++i)
    CHECK(t1.value(s1.video).data[i] == t2.value(s2.video).data[i]);

  CHECK_THROWS_AS(rff_stack(t, t.input(video), t.input(text), 0),
                  ValidationError);
}

TEST_CASE("single text row: video-as-query broadcast, direction swaps length") {
  const int d = 5;
  ParamStore store = make_store(d, 1, 5);
  Rng rng(6);
  const Tensor2D video = random_tensor(6, d, rng);
  const Tensor2D text = random_tensor(1, d, rng);

  Tape t(&store);
  const FusionState s{t.input(video), t.input(text), 0};
  const int v_dir = cross_attend(t, s, CrossDirection::video_as_query, 0);
  const int t_dir = cross_attend(t, s, CrossDirection::text_as_query, 0);
  CHECK(t.value(v_dir).rows == 6);
  CHECK(t.value(t_dir).rows == 1);

  // one key: every output row equals the projected single text row
  const int proj = t.matmul(s.text, t.param("rff.0.ca.wv"));
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < d; ++c)
      CHECK(t.value(v_dir).at(r, c) == doctest::Approx(t.value(proj).at(0, c)));
}

TEST_CASE("width mismatch is rejected") {
  ParamStore store = make_store(4, 1, 1);
  Tape t(&store);
  Rng rng(1);
  const FusionState s{t.input(random_tensor(3, 4, rng)),
                      t.input(random_tensor(2, 5, rng)), 0};
  CHECK_THROWS_AS(cross_attend(t, s, CrossDirection::video_as_query, 0),
                  ValidationError);
}

TEST_CASE("shared cross-attention weights drive both directions") {
  const int d = 5;
  ParamStore store = make_store(d, 1, 31);
  Rng rng(32);
  const Tensor2D video = random_tensor(4, d, rng);
  const Tensor2D text = random_tensor(3, d, rng);

  auto run = [&](ParamStore& st) {
    Tape t(&st);
    const FusionState s{t.input(video), t.input(text), 0};
    const Tensor2D v_out =
        t.value(cross_attend(t, s, CrossDirection::video_as_query, 0));
    const Tensor2D t_out =
        t.value(cross_attend(t, s, CrossDirection::text_as_query, 0));
    return std::pair(v_out, t_out);
  };

  const auto base = run(store);
  ParamStore zeroed = make_store(d, 1, 31);
  zeroed.at("rff.0.ca.wv").value.fill(0.0);
  const auto z = run(zeroed);
  // zeroing the shared value projection zeroes BOTH directions
  for (double x : z.first.data) CHECK(x == 0.0);
  for (double x : z.second.data) CHECK(x == 0.0);
  bool base_nonzero = false;
  for (double x : base.first.data) base_nonzero |= x != 0.0;
  CHECK(base_nonzero);

  // perturbing one shared weight changes both branch outputs
  ParamStore bumped = make_store(d, 1, 31);
  bumped.at("rff.0.ca.wq").value.at(1, 2) += 0.25;
  const auto b = run(bumped);
  bool v_changed = false, t_changed = false;
  for (std::size_t i = 0; i < b.first.data.size(); ++i)
    v_changed |= b.first.data[i] != base.first.data[i];
  for (std::size_t i = 0; i < b.second.data.size(); ++i)
    t_changed |= b.second.data[i] != base.second.data[i];
  CHECK(v_changed);
  CHECK(t_changed);
}

TEST_CASE("one rff layer owns exactly shared CA + SA_v + SA_q parameters") {
  ParamStore store;
  add_rff_params(store, 4, 1);
  CHECK(store.entries().size() == 9);  // 3 units x {wq, wk, wv}
  int ca = 0, sav = 0, saq = 0;
  for (const auto& e : store.entries()) {
    if (e.name.find(".ca.") != std::string::npos) ++ca;
    if (e.name.find(".sav.") != std::string::npos) ++sav;
    if (e.name.find(".saq.") != std::string::npos) ++saq;
  }
  CHECK(ca == 3);
  CHECK(sav == 3);
  CHECK(saq == 3);
}

TEST_CASE("branch update order within a layer does not matter") {
  const int d = 5;
  ParamStore store = make_store(d, 1, 41);
  Rng rng(42);
  const Tensor2D video = random_tensor(5, d, rng);
  const Tensor2D text = random_tensor(3, d, rng);

  // video branch first
  Tape ta(&store);
  const FusionState sa{ta.input(video), ta.input(text), 0};
  const int av = self_refine(ta, cross_attend(ta, sa, CrossDirection::video_as_query, 0), 0, true);
  const int at = self_refine(ta, cross_attend(ta, sa, CrossDirection::text_as_query, 0), 0, false);

  // text branch first
  Tape tb(&store);
  const FusionState sb{tb.input(video), tb.input(text), 0};
  const int bt = self_refine(tb, cross_attend(tb, sb, CrossDirection::text_as_query, 0), 0, false);
  const int bv = self_refine(tb, cross_attend(tb, sb, CrossDirection::video_as_query, 0), 0, true);

  for (std::size_t i = 0; i < ta.value(av).data.size(); ++i)
    CHECK(ta.value(av).data[i] == tb.value(bv).data[i]);
  for (std::size_t i = 0; i < ta.value(at).data.size(); ++i)
    CHECK(ta.value(at).data[i] == tb.value(bt).data[i]);
}

TEST_CASE("permuting video rows permutes the video branch, text invariant") {
  const int d = 5;
  ParamStore store = make_store(d, 2, 51);
  Rng rng(52);
  const Tensor2D video = random_tensor(6, d, rng);
  const Tensor2D text = random_tensor(3, d, rng);
  const std::vector<int> perm = {4, 0, 5, 2, 1, 3};

  Tensor2D video_p(6, d);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < d; ++c) video_p.at(r, c) = video.at(perm[r], c);

  Tape ta(&store);
  const FusionState base = rff_stack(ta, ta.input(video), ta.input(text), 2);
  Tape tb(&store);
  const FusionState permuted =
      rff_stack(tb, tb.input(video_p), tb.input(text), 2);

  // no positional encoding inside the block: the permutation commutes with
  // the video branch and leaves the text branch unchanged (up to float
  // reduction order in the softmax sums)
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < d; ++c)
      CHECK(tb.value(permuted.video).at(r, c) ==
            doctest::Approx(ta.value(base.video).at(perm[r], c))
                .epsilon(1e-12));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < d; ++c)
      CHECK(tb.value(permuted.text).at(r, c) ==
            doctest::Approx(ta.value(base.text).at(r, c)).epsilon(1e-12));
}

TEST_CASE("full stack gradient check at small dims") {
  const int d = 4;
  ParamStore store = make_store(d, 2, 61);
  Rng rng(62);
  const Tensor2D video = random_tensor(4, d, rng);
  const Tensor2D text = random_tensor(3, d, rng);
  auto loss = [&](bool with_grad) {
    Tape t(&store);
    const FusionState out = rff_stack(t, t.input(video), t.input(text), 2);
    std::vector<double> zv(t.value(out.video).size(), 0.0);
    std::vector<double> zt(t.value(out.text).size(), 0.0);
    const int lv = t.smooth_l1_rows_mean(out.video, zv, {0, 1, 2, 3});
    const int lt = t.smooth_l1_rows_mean(out.text, zt, {0, 1, 2});
    const int l = t.weighted_sum({lv, lt}, {1.0, 1.0});
    if (with_grad) t.backward(l);
    return t.scalar_value(l);
  };
  const auto report = grad_check(store, loss, 1e-5, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("concat fusion produces clip-aligned features") {
  const int d = 5;
  ParamStore store;
  add_concat_params(store, d);
  store.init_xavier(71);
  Rng rng(72);
  Tape t(&store);
  const int out = concat_fusion(t, t.input(random_tensor(6, d, rng)),
                                t.input(random_tensor(3, d, rng)));
  CHECK(t.value(out).rows == 6);
  CHECK(t.value(out).cols == d);
}
