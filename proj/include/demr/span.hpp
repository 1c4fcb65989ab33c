#pragma once

#include "demr/errors.hpp"

namespace demr {

/// Closed interval in normalized video time, 0 <= start <= end <= 1.
struct MomentSpan {
  double start;
  double end;

  MomentSpan(double s, double e);
};

/// Intersection over union of two 1-D intervals. Disjoint -> 0; identical
/// nondegenerate -> 1; two zero-length spans at the same point -> 1.
double iou_1d(const MomentSpan& a, const MomentSpan& b);

/// 1 - gIoU with gIoU = IoU - (hull - union)/hull. Zero-length hull is
/// defined as loss 0 (both spans are then the identical point).
double giou_loss_1d(const MomentSpan& pred, const MomentSpan& gt);

/// giou_loss_1d plus its partials w.r.t. the predicted endpoints, for the
/// training path. Piecewise derivatives; ties take the zero branch.
struct GiouValueGrad {
  double loss;
  double d_start;
  double d_end;
};
GiouValueGrad giou_loss_value_grad(double ps, double pe, double gs, double ge);

}  // namespace demr
