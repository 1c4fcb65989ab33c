#include "demr/span.hpp"

#include <algorithm>
#include <cmath>

namespace demr {

MomentSpan::MomentSpan(double s, double e) : start(s), end(e) {
  if (!std::isfinite(s) || !std::isfinite(e))
    throw ValidationError("MomentSpan: non-finite endpoint");
  if (s < 0.0 || e > 1.0 || s > e)
    throw ValidationError("MomentSpan: need 0 <= start <= end <= 1, got [" +
                          std::to_string(s) + ", " + std::to_string(e) + "]");
}

double iou_1d(const MomentSpan& a, const MomentSpan& b) {
  const double inter =
      std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  if (uni <= 0.0)
    return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
  return inter / uni;
}

GiouValueGrad giou_loss_value_grad(double ps, double pe, double gs, double ge) {
  const double inter = std::max(0.0, std::min(pe, ge) - std::max(ps, gs));
  const double uni = (pe - ps) + (ge - gs) - inter;
  const double hull = std::max(pe, ge) - std::min(ps, gs);

  if (hull <= 0.0) {
    if (ps == gs && pe == ge) return {0.0, 0.0, 0.0};
    throw NumericalError("giou_loss_1d: zero-length hull over distinct spans");
  }
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  const double giou = iou - (hull - uni) / hull;
  const double loss = 1.0 - giou;

  // piecewise partials of inter/union/hull w.r.t. the predicted endpoints
  const double di_ds = (inter > 0.0 && ps > gs) ? -1.0 : 0.0;
  const double di_de = (inter > 0.0 && pe < ge) ? 1.0 : 0.0;
  const double du_ds = -1.0 - di_ds;
  const double du_de = 1.0 - di_de;
  const double dh_ds = ps < gs ? -1.0 : 0.0;
  const double dh_de = pe > ge ? 1.0 : 0.0;

  double diou_ds = 0.0, diou_de = 0.0;
  if (uni > 0.0) {
    diou_ds = (di_ds * uni - inter * du_ds) / (uni * uni);
    diou_de = (di_de * uni - inter * du_de) / (uni * uni);
  }
  const double dratio_ds = (du_ds * hull - uni * dh_ds) / (hull * hull);
  const double dratio_de = (du_de * hull - uni * dh_de) / (hull * hull);

  // loss = 2 - iou - uni/hull
  return {loss, -diou_ds - dratio_ds, -diou_de - dratio_de};
}

double giou_loss_1d(const MomentSpan& pred, const MomentSpan& gt) {
  return giou_loss_value_grad(pred.start, pred.end, gt.start, gt.end).loss;
}

}  // namespace demr
