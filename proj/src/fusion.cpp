#include "demr/fusion.hpp"

namespace demr {

FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "rff") return FusionKind::rff;
  if (s == "concat") return FusionKind::concat;
  throw ValidationError("unknown fusion kind: '" + s + "'");
}

std::string to_string(FusionKind k) {
  return k == FusionKind::rff ? "rff" : "concat";
}

static std::string layer_prefix(int layer) {
  return "rff." + std::to_string(layer) + ".";
}

void add_rff_params(ParamStore& store, int d, int n_layers) {
  for (int l = 0; l < n_layers; ++l) {
    const std::string p = layer_prefix(l);
    for (const char* unit : {"ca", "sav", "saq"}) {
      store.add(p + unit + ".wq", d, d);
      store.add(p + unit + ".wk", d, d);
      store.add(p + unit + ".wv", d, d);
    }
  }
}

void add_concat_params(ParamStore& store, int d) {
  store.add("concat.w", 2 * d, d);
  store.add("concat.b", 1, d);
}

static int unit_attention(Tape& t, int q, int kv, const std::string& unit) {
  return t.attention(q, kv, t.param(unit + ".wq"), t.param(unit + ".wk"),
                     t.param(unit + ".wv"));
}

int cross_attend(Tape& t, const FusionState& s, CrossDirection dir,
                 int layer) {
  if (t.value(s.video).cols != t.value(s.text).cols)
    throw ValidationError("cross_attend: feature width mismatch, video " +
                          t.value(s.video).shape_str() + " vs text " +
                          t.value(s.text).shape_str());
  const std::string unit = layer_prefix(layer) + "ca";
  return dir == CrossDirection::video_as_query
             ? unit_attention(t, s.video, s.text, unit)
             : unit_attention(t, s.text, s.video, unit);
}

int self_refine(Tape& t, int x, int layer, bool video_branch) {
  const std::string unit = layer_prefix(layer) + (video_branch ? "sav" : "saq");
  return unit_attention(t, x, x, unit);
}

FusionState rff_layer(Tape& t, const FusionState& s) {
  const int ca_v = cross_attend(t, s, CrossDirection::video_as_query,
                                s.layer_index);
  const int ca_q = cross_attend(t, s, CrossDirection::text_as_query,
                                s.layer_index);
  // branch-level residual: without it a stack of softmax attentions
  // collapses all rows to a single point within two layers and the score
  // gradients vanish
  FusionState out;
  out.video = t.add(s.video, self_refine(t, ca_v, s.layer_index, true));
  out.text = t.add(s.text, self_refine(t, ca_q, s.layer_index, false));
  out.layer_index = s.layer_index + 1;
  return out;
}

FusionState rff_stack(Tape& t, int video, int text, int n_layers) {
  if (n_layers < 1)
    throw ValidationError("rff_stack: need at least one layer");
  FusionState s{video, text, 0};
  for (int l = 0; l < n_layers; ++l) s = rff_layer(t, s);
  return s;
}

int concat_fusion(Tape& t, int video, int text) {
  const int pooled = t.mean_rows(text);
  const int tiled = t.tile_rows(pooled, t.value(video).rows);
  const int cat = t.concat_cols(video, tiled);
  return t.tanh_op(t.affine(cat, t.param("concat.w"), t.param("concat.b")));
}

}  // namespace demr
