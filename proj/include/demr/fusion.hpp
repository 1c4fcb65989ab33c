#pragma once

#include <string>

#include "demr/autodiff.hpp"

namespace demr {

enum class FusionKind { rff, concat };

FusionKind parse_fusion_kind(const std::string& s);
std::string to_string(FusionKind k);

enum class CrossDirection { video_as_query, text_as_query };

/// Video/text feature pair flowing through the fusion stack.
struct FusionState {
  int video;  // tape node, L_v x D
  int text;   // tape node, L_q x D
  int layer_index = 0;
};

// Parameter names for one stack. Layer l owns one shared cross-attention
// projection set ("rff.<l>.ca.*") used in both directions plus one
// self-attention set per branch.
void add_rff_params(ParamStore& store, int d, int n_layers);
void add_concat_params(ParamStore& store, int d);

/// Shared-weight cross-attention. video_as_query yields an L_v x D update
/// (text acts as keys/values); text_as_query the L_q x D mirror.
int cross_attend(Tape& t, const FusionState& s, CrossDirection dir, int layer);

/// Branch-specific self-attention refinement.
int self_refine(Tape& t, int x, int layer, bool video_branch);

/// One fusion layer: both cross-attentions read the same input state, then
/// each branch refines itself. No residuals, no normalization layers.
FusionState rff_layer(Tape& t, const FusionState& s);

/// n >= 1 applications of rff_layer.
FusionState rff_stack(Tape& t, int video, int text, int n_layers);

/// Concatenation baseline: mean-pooled text broadcast onto every clip row,
/// then a tanh affine back to width D.
int concat_fusion(Tape& t, int video, int text);

}  // namespace demr
