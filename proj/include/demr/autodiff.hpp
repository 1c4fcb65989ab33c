#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "demr/evidential.hpp"
#include "demr/regularizers.hpp"
#include "demr/tensor.hpp"

namespace demr {

/// Named parameter tensors with matching gradient slots and Adam moments.
/// Entry order is insertion order and fixed for the life of the store, which
/// keeps every reduction and update deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor2D value;
    Tensor2D grad;
    Tensor2D adam_m;
    Tensor2D adam_v;
    bool trainable = true;
  };

  Entry& add(const std::string& name, int rows, int cols);
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  void zero_grads();
  double grad_norm() const;

  /// Adam update with bias correction; gradients are zeroed afterward.
  /// Frozen entries are left untouched (moments included).
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  void set_trainable_prefix(const std::string& prefix, bool trainable);

  /// Xavier-uniform init (+-sqrt(6/(fan_in+fan_out))) for every entry whose
  /// name does not end in ".b"; biases stay zero. Each tensor draws from a
  /// stream derived from (seed, name).
  void init_xavier(std::uint64_t seed);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> by_name_;
  std::int64_t step_ = 0;
};

/// Reverse-accumulation tape over Tensor2D values. Node values are computed
/// eagerly at construction time, so batch statistics can be read off the tape
/// mid-build and baked into later nodes as constants. backward() walks the
/// node list in reverse and accumulates parameter gradients into the bound
/// ParamStore.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  // leaves
  int constant(Tensor2D v);
  int input(Tensor2D v);  // like constant but receives a gradient slot
  int param(const std::string& name);

  // elementwise / structural
  int add(int a, int b);
  int scale(int a, double s);
  int tanh_op(int a);
  int softplus_op(int a);
  int stop_gradient(int a);
  int concat_cols(int a, int b);
  int gather_rows(int a, std::vector<int> rows);
  int mean_rows(int a);
  int tile_rows(int a, int copies);

  // linear algebra
  int matmul(int a, int b);     // A (m x k) * B (k x n)
  int matmul_nt(int a, int b);  // A (m x k) * B^T (n x k)
  int affine(int x, int w, int b);  // x*W + bias row broadcast
  int softmax_rows(int a);

  /// Softmax((q Wq)(kv Wk)^T / sqrt(d_k)) (kv Wv); single head, d_k = proj dim.
  int attention(int q, int kv, int wq, int wk, int wv);

  // scalar losses (all produce 1x1 nodes)
  int bce_with_logits_mean(int logits, const std::vector<double>& targets);
  int cross_entropy_rows_mean(int logits, const std::vector<int>& targets);
  /// Mean over the given rows of smooth-L1 applied entrywise to (x - target),
  /// summed across columns. 0 if rows is empty.
  int smooth_l1_rows_mean(int x, const std::vector<double>& targets,
                          const std::vector<int>& rows);
  /// Mean over the given rows of the 1-D generalized-IoU loss between the
  /// span decoded from (left, right) offsets around each row's center and the
  /// ground-truth span. Decoded endpoints are clipped to [0,1].
  int giou_span_rows_mean(int offsets, const std::vector<double>& centers,
                          double gt_start, double gt_end,
                          const std::vector<int>& rows);

  enum class EvTerm { nll, vanilla_reg, geom_reg };
  /// Sum over the given rows of 0.5*(term(start) + term(end)) where each row
  /// of `raw8` holds the raw evidential outputs (4 start + 4 end) and the
  /// targets are the normalized ground-truth boundaries. For geom_reg the
  /// batch max statistics are passed in as constants.
  int evidential_rows_sum(int raw8, const std::vector<int>& rows,
                          double b_start, double b_end, EvTerm term,
                          double max_delta = 0.0, double max_phi = 0.0);

  int weighted_sum(const std::vector<int>& nodes,
                   const std::vector<double>& weights);

  const Tensor2D& value(int id) const { return nodes_[id].val; }
  const Tensor2D& grad(int id) const { return nodes_[id].grad; }
  double scalar_value(int id) const;
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(node)/d(node) = 1 and accumulates gradients down the tape and
  /// into the ParamStore. The node must be 1x1.
  void backward(int scalar_node);

 private:
  enum class Op {
    kConstant, kInput, kParam, kAdd, kScale, kTanh, kSoftplus, kStopGrad,
    kConcatCols, kGatherRows, kMeanRows, kTileRows, kMatmul, kMatmulNT,
    kAffine, kSoftmaxRows, kBce, kCrossEntropy, kSmoothL1Rows, kGiouRows,
    kEvidential, kWeightedSum,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    Tensor2D val;
    Tensor2D grad;
    std::vector<int> idx;     // row indices / input list / int targets
    std::vector<double> aux;  // targets / centers / weights
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i0 = 0;
    std::string pname;
  };

  int push(Node n);
  void backward_node(int id);
  const Tensor2D& v(int id) const { return nodes_[id].val; }
  Tensor2D& g(int id) { return nodes_[id].grad; }

  ParamStore* store_;
  std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
  std::unordered_map<std::string, int> param_nodes_;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double h = 0.0;
  double tol = 0.0;
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Central-difference check of analytic gradients over every coordinate of
/// every trainable parameter. `loss(true)` must populate store gradients and
/// return the loss; `loss(false)` must only return the loss. Relative error
/// uses denominator max(|analytic|, |numeric|, 1e-8). `corrupt_param`, when
/// non-empty, perturbs that parameter's analytic gradient before comparison
/// (negative-control hook for tests).
GradCheckReport grad_check(ParamStore& store,
                           const std::function<double(bool)>& loss, double h,
                           double tol, const std::string& corrupt_param = "");

}  // namespace demr
