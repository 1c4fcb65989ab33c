#include "demr/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "demr/rng.hpp"
#include "demr/span.hpp"

namespace demr {

// ---------------------------------------------------------------------------
// ParamStore

ParamStore::Entry& ParamStore::add(const std::string& name, int rows,
                                   int cols) {
  if (by_name_.count(name))
    throw ValidationError("ParamStore: duplicate parameter '" + name + "'");
  by_name_[name] = static_cast<int>(entries_.size());
  entries_.push_back({name, Tensor2D(rows, cols), Tensor2D(rows, cols),
                      Tensor2D(rows, cols), Tensor2D(rows, cols), true});
  return entries_.back();
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw ValidationError("ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw ValidationError("ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second];
}

bool ParamStore::has(const std::string& name) const {
  return by_name_.count(name) > 0;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_)
    for (double gv : e.grad.data) s += gv * gv;
  return std::sqrt(s);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& e : entries_) {
    if (!e.trainable) {
      e.grad.fill(0.0);
      continue;
    }
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      const double gv = e.grad.data[i];
      double& m = e.adam_m.data[i];
      double& v = e.adam_v.data[i];
      m = beta1 * m + (1.0 - beta1) * gv;
      v = beta2 * v + (1.0 - beta2) * gv * gv;
      e.value.data[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
      e.grad.data[i] = 0.0;
    }
  }
}

void ParamStore::set_trainable_prefix(const std::string& prefix,
                                      bool trainable) {
  for (auto& e : entries_)
    if (e.name.rfind(prefix, 0) == 0) e.trainable = trainable;
}

void ParamStore::init_xavier(std::uint64_t seed) {
  for (auto& e : entries_) {
    if (e.value.rows == 1) continue;  // bias rows stay zero
    const double limit =
        std::sqrt(6.0 / static_cast<double>(e.value.rows + e.value.cols));
    Rng rng(derive_seed(seed, "init/" + e.name));
    for (double& x : e.value.data) x = rng.uniform(-limit, limit);
  }
}

// ---------------------------------------------------------------------------
// Tape

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Tensor2D t) {
  Node n;
  n.op = Op::kConstant;
  n.val = std::move(t);
  return push(std::move(n));
}

int Tape::input(Tensor2D t) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(t);
  return push(std::move(n));
}

int Tape::param(const std::string& name) {
  if (!store_) throw ValidationError("Tape: no ParamStore bound");
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return it->second;
  Node n;
  n.op = Op::kParam;
  n.val = store_->at(name).value;
  n.pname = name;
  int id = push(std::move(n));
  param_nodes_[name] = id;
  return id;
}

int Tape::add(int a, int b) {
  if (!v(a).same_shape(v(b)))
    throw ValidationError("add: shape mismatch " + v(a).shape_str() + " vs " +
                          v(b).shape_str());
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.val = v(a);
  n.val.axpy(1.0, v(b));
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.s0 = s;
  n.val = v(a);
  for (double& x : n.val.data) x *= s;
  return push(std::move(n));
}

int Tape::tanh_op(int a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.val = v(a);
  for (double& x : n.val.data) x = std::tanh(x);
  return push(std::move(n));
}

int Tape::softplus_op(int a) {
  Node n;
  n.op = Op::kSoftplus;
  n.a = a;
  n.val = v(a);
  for (double& x : n.val.data) x = softplus(x);
  return push(std::move(n));
}

int Tape::stop_gradient(int a) {
  Node n;
  n.op = Op::kStopGrad;
  n.a = a;
  n.val = v(a);
  return push(std::move(n));
}

int Tape::concat_cols(int a, int b) {
  const Tensor2D& A = v(a);
  const Tensor2D& B = v(b);
  if (A.rows != B.rows)
    throw ValidationError("concat_cols: row mismatch " + A.shape_str() +
                          " vs " + B.shape_str());
  Node n;
  n.op = Op::kConcatCols;
  n.a = a;
  n.b = b;
  n.val = Tensor2D(A.rows, A.cols + B.cols);
  for (int r = 0; r < A.rows; ++r) {
    for (int c = 0; c < A.cols; ++c) n.val.at(r, c) = A.at(r, c);
    for (int c = 0; c < B.cols; ++c) n.val.at(r, A.cols + c) = B.at(r, c);
  }
  return push(std::move(n));
}

int Tape::gather_rows(int a, std::vector<int> rows) {
  const Tensor2D& A = v(a);
  for (int r : rows)
    if (r < 0 || r >= A.rows)
      throw ValidationError("gather_rows: index " + std::to_string(r) +
                            " out of range for " + A.shape_str());
  Node n;
  n.op = Op::kGatherRows;
  n.a = a;
  n.val = Tensor2D(static_cast<int>(rows.size()), A.cols);
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (int c = 0; c < A.cols; ++c)
      n.val.at(static_cast<int>(t), c) = A.at(rows[t], c);
  n.idx = std::move(rows);
  return push(std::move(n));
}

int Tape::mean_rows(int a) {
  const Tensor2D& A = v(a);
  if (A.rows < 1) throw ValidationError("mean_rows: empty input");
  Node n;
  n.op = Op::kMeanRows;
  n.a = a;
  n.val = Tensor2D(1, A.cols);
  for (int r = 0; r < A.rows; ++r)
    for (int c = 0; c < A.cols; ++c) n.val.at(0, c) += A.at(r, c);
  for (double& x : n.val.data) x /= A.rows;
  return push(std::move(n));
}

int Tape::tile_rows(int a, int copies) {
  const Tensor2D& A = v(a);
  if (A.rows != 1) throw ValidationError("tile_rows: input must be 1 row");
  Node n;
  n.op = Op::kTileRows;
  n.a = a;
  n.val = Tensor2D(copies, A.cols);
  for (int r = 0; r < copies; ++r)
    for (int c = 0; c < A.cols; ++c) n.val.at(r, c) = A.at(0, c);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const Tensor2D& A = v(a);
  const Tensor2D& B = v(b);
  if (A.cols != B.rows)
    throw ValidationError("matmul: shape mismatch " + A.shape_str() + " * " +
                          B.shape_str());
  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  n.val = Tensor2D(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int k = 0; k < A.cols; ++k) {
      const double aik = A.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &B.data[static_cast<std::size_t>(k) * B.cols];
      double* crow = &n.val.data[static_cast<std::size_t>(i) * B.cols];
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
  const Tensor2D& A = v(a);
  const Tensor2D& B = v(b);
  if (A.cols != B.cols)
    throw ValidationError("matmul_nt: shape mismatch " + A.shape_str() +
                          " * (" + B.shape_str() + ")^T");
  Node n;
  n.op = Op::kMatmulNT;
  n.a = a;
  n.b = b;
  n.val = Tensor2D(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.data[static_cast<std::size_t>(i) * A.cols];
    for (int j = 0; j < B.rows; ++j) {
      const double* brow = &B.data[static_cast<std::size_t>(j) * B.cols];
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
      n.val.at(i, j) = s;
    }
  }
  return push(std::move(n));
}

int Tape::affine(int x, int w, int b) {
  const Tensor2D& X = v(x);
  const Tensor2D& W = v(w);
  const Tensor2D& B = v(b);
  if (X.cols != W.rows || B.rows != 1 || B.cols != W.cols)
    throw ValidationError("affine: shape mismatch x=" + X.shape_str() +
                          " W=" + W.shape_str() + " b=" + B.shape_str());
  Node n;
  n.op = Op::kAffine;
  n.a = x;
  n.b = w;
  n.c = b;
  n.val = Tensor2D(X.rows, W.cols);
  for (int i = 0; i < X.rows; ++i)
    for (int j = 0; j < W.cols; ++j) n.val.at(i, j) = B.at(0, j);
  for (int i = 0; i < X.rows; ++i)
    for (int k = 0; k < X.cols; ++k) {
      const double xik = X.at(i, k);
      if (xik == 0.0) continue;
      const double* wrow = &W.data[static_cast<std::size_t>(k) * W.cols];
      double* yrow = &n.val.data[static_cast<std::size_t>(i) * W.cols];
      for (int j = 0; j < W.cols; ++j) yrow[j] += xik * wrow[j];
    }
  return push(std::move(n));
}

int Tape::softmax_rows(int a) {
  const Tensor2D& A = v(a);
  if (!A.all_finite())
    throw ValidationError("softmax_rows: non-finite input");
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = a;
  n.val = Tensor2D(A.rows, A.cols);
  for (int r = 0; r < A.rows; ++r) {
    double m = A.at(r, 0);
    for (int c = 1; c < A.cols; ++c) m = std::max(m, A.at(r, c));
    double s = 0.0;
    for (int c = 0; c < A.cols; ++c) {
      const double e = std::exp(A.at(r, c) - m);
      n.val.at(r, c) = e;
      s += e;
    }
    for (int c = 0; c < A.cols; ++c) n.val.at(r, c) /= s;
  }
  return push(std::move(n));
}

int Tape::attention(int q, int kv, int wq, int wk, int wv) {
  const int Q = matmul(q, wq);
  const int K = matmul(kv, wk);
  const int V = matmul(kv, wv);
  const int d_k = value(Q).cols;
  const int scores = scale(matmul_nt(Q, K), 1.0 / std::sqrt(double(d_k)));
  return matmul(softmax_rows(scores), V);
}

int Tape::bce_with_logits_mean(int logits, const std::vector<double>& targets) {
  const Tensor2D& Z = v(logits);
  if (Z.cols != 1 || static_cast<std::size_t>(Z.rows) != targets.size())
    throw ValidationError("bce_with_logits_mean: logits " + Z.shape_str() +
                          " vs " + std::to_string(targets.size()) +
                          " targets");
  Node n;
  n.op = Op::kBce;
  n.a = logits;
  n.aux = targets;
  double s = 0.0;
  for (int r = 0; r < Z.rows; ++r) {
    const double z = Z.at(r, 0);
    const double t = targets[r];
    s += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
  }
  n.val = Tensor2D::scalar(s / Z.rows);
  return push(std::move(n));
}

int Tape::cross_entropy_rows_mean(int logits, const std::vector<int>& targets) {
  const Tensor2D& Z = v(logits);
  if (static_cast<std::size_t>(Z.rows) != targets.size())
    throw ValidationError("cross_entropy_rows_mean: logits " + Z.shape_str() +
                          " vs " + std::to_string(targets.size()) +
                          " targets");
  for (int t : targets)
    if (t < 0 || t >= Z.cols)
      throw ValidationError(
          "cross_entropy_rows_mean: target id " + std::to_string(t) +
          " outside vocabulary of size " + std::to_string(Z.cols));
  Node n;
  n.op = Op::kCrossEntropy;
  n.a = logits;
  n.idx = targets;
  double s = 0.0;
  for (int r = 0; r < Z.rows; ++r) {
    double m = Z.at(r, 0);
    for (int c = 1; c < Z.cols; ++c) m = std::max(m, Z.at(r, c));
    double lse = 0.0;
    for (int c = 0; c < Z.cols; ++c) lse += std::exp(Z.at(r, c) - m);
    s += m + std::log(lse) - Z.at(r, targets[r]);
  }
  n.val = Tensor2D::scalar(Z.rows == 0 ? 0.0 : s / Z.rows);
  return push(std::move(n));
}

static double smooth_l1_scalar(double d) {
  const double a = std::fabs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

int Tape::smooth_l1_rows_mean(int x, const std::vector<double>& targets,
                              const std::vector<int>& rows) {
  const Tensor2D& X = v(x);
  if (targets.size() != X.size())
    throw ValidationError("smooth_l1_rows_mean: target size mismatch");
  Node n;
  n.op = Op::kSmoothL1Rows;
  n.a = x;
  n.aux = targets;
  n.idx = rows;
  double s = 0.0;
  for (int r : rows)
    for (int c = 0; c < X.cols; ++c)
      s += smooth_l1_scalar(X.at(r, c) - targets[r * X.cols + c]);
  n.val = Tensor2D::scalar(rows.empty() ? 0.0 : s / rows.size());
  return push(std::move(n));
}

int Tape::giou_span_rows_mean(int offsets, const std::vector<double>& centers,
                              double gt_start, double gt_end,
                              const std::vector<int>& rows) {
  const Tensor2D& O = v(offsets);
  if (O.cols != 2 || centers.size() != static_cast<std::size_t>(O.rows))
    throw ValidationError("giou_span_rows_mean: offsets " + O.shape_str() +
                          " vs " + std::to_string(centers.size()) +
                          " centers");
  Node n;
  n.op = Op::kGiouRows;
  n.a = offsets;
  n.aux = centers;
  n.idx = rows;
  n.s0 = gt_start;
  n.s1 = gt_end;
  double s = 0.0;
  for (int r : rows) {
    const double c = centers[r];
    const double ps = std::clamp(c - O.at(r, 0), 0.0, 1.0);
    const double pe = std::clamp(c + O.at(r, 1), 0.0, 1.0);
    s += giou_loss_value_grad(ps, pe, gt_start, gt_end).loss;
  }
  n.val = Tensor2D::scalar(rows.empty() ? 0.0 : s / rows.size());
  return push(std::move(n));
}

// Per-row raw layout: [0..3] start head, [4..7] end head.
static double evidential_boundary_term(const double* raw4, double b,
                                       Tape::EvTerm term, double max_delta,
                                       double max_phi, double* grad4_out) {
  const std::array<double, 4> raw = {raw4[0], raw4[1], raw4[2], raw4[3]};
  const NIGParams p = constrain_raw_to_nig(raw);
  const std::array<double, 4> jac = constrain_jacobian(raw);

  double value = 0.0;
  std::array<double, 4> dc{};  // gradient in constrained space
  switch (term) {
    case Tape::EvTerm::nll: {
      value = student_t_nll(b, p);
      dc = nll_gradients(b, p);
      break;
    }
    case Tape::EvTerm::vanilla_reg: {
      const EvidencePair pair = evidence_pair(b, p);
      value = pair.delta * pair.phi;
      const double e = b - p.gamma;
      const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      dc = {-sgn * pair.phi, 2.0 * pair.delta, pair.delta, 0.0};
      break;
    }
    case Tape::EvTerm::geom_reg: {
      const EvidencePair pair = evidence_pair(b, p);
      const double sd = 1.0 / std::max(max_delta, kEps);
      const double sp = 1.0 / std::max(max_phi, kEps);
      const double t = pair.delta * sd + pair.phi * sp - 1.0;
      value = t * t;
      const double e = b - p.gamma;
      const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      dc = {2.0 * t * sd * -sgn, 2.0 * t * sp * 2.0, 2.0 * t * sp, 0.0};
      break;
    }
  }
  if (grad4_out)
    for (int i = 0; i < 4; ++i) grad4_out[i] = dc[i] * jac[i];
  return value;
}

int Tape::evidential_rows_sum(int raw8, const std::vector<int>& rows,
                              double b_start, double b_end, EvTerm term,
                              double max_delta, double max_phi) {
  const Tensor2D& R = v(raw8);
  if (R.cols != 8)
    throw ValidationError("evidential_rows_sum: need 8 raw columns, got " +
                          R.shape_str());
  Node n;
  n.op = Op::kEvidential;
  n.a = raw8;
  n.idx = rows;
  n.s0 = b_start;
  n.s1 = b_end;
  n.s2 = max_delta;
  n.s3 = max_phi;
  n.i0 = static_cast<int>(term);
  double s = 0.0;
  for (int r : rows) {
    const double* row = &R.data[static_cast<std::size_t>(r) * 8];
    s += 0.5 * evidential_boundary_term(row, b_start, term, max_delta, max_phi,
                                        nullptr);
    s += 0.5 * evidential_boundary_term(row + 4, b_end, term, max_delta,
                                        max_phi, nullptr);
  }
  n.val = Tensor2D::scalar(s);
  return push(std::move(n));
}

int Tape::weighted_sum(const std::vector<int>& ids,
                       const std::vector<double>& weights) {
  if (ids.size() != weights.size())
    throw ValidationError("weighted_sum: ids/weights length mismatch");
  Node n;
  n.op = Op::kWeightedSum;
  n.idx = ids;
  n.aux = weights;
  double s = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (v(ids[i]).size() != 1)
      throw ValidationError("weighted_sum: inputs must be scalars");
    s += weights[i] * v(ids[i]).data[0];
  }
  n.val = Tensor2D::scalar(s);
  return push(std::move(n));
}

double Tape::scalar_value(int id) const {
  if (v(id).size() != 1)
    throw ValidationError("scalar_value: node is " + v(id).shape_str());
  return v(id).data[0];
}

void Tape::backward(int scalar_node) {
  if (v(scalar_node).size() != 1)
    throw ValidationError("backward: node is not a scalar");
  for (auto& n : nodes_) {
    n.grad = Tensor2D(n.val.rows, n.val.cols);
  }
  nodes_[scalar_node].grad.data[0] = 1.0;
  for (int id = scalar_node; id >= 0; --id) backward_node(id);
  if (store_)
    for (const auto& [name, id] : param_nodes_)
      store_->at(name).grad.axpy(1.0, nodes_[id].grad);
}

void Tape::backward_node(int id) {
  Node& n = nodes_[id];
  const Tensor2D& go = n.grad;

  switch (n.op) {
    case Op::kConstant:
    case Op::kInput:
    case Op::kParam:
    case Op::kStopGrad:
      break;

    case Op::kAdd:
      g(n.a).axpy(1.0, go);
      g(n.b).axpy(1.0, go);
      break;

    case Op::kScale:
      g(n.a).axpy(n.s0, go);
      break;

    case Op::kTanh:
      for (std::size_t i = 0; i < go.data.size(); ++i)
        g(n.a).data[i] += go.data[i] * (1.0 - n.val.data[i] * n.val.data[i]);
      break;

    case Op::kSoftplus: {
      const Tensor2D& X = v(n.a);
      for (std::size_t i = 0; i < go.data.size(); ++i)
        g(n.a).data[i] += go.data[i] * sigmoid(X.data[i]);
      break;
    }

    case Op::kConcatCols: {
      Tensor2D& ga = g(n.a);
      Tensor2D& gb = g(n.b);
      for (int r = 0; r < ga.rows; ++r) {
        for (int c = 0; c < ga.cols; ++c) ga.at(r, c) += go.at(r, c);
        for (int c = 0; c < gb.cols; ++c)
          gb.at(r, c) += go.at(r, ga.cols + c);
      }
      break;
    }

    case Op::kGatherRows: {
      Tensor2D& ga = g(n.a);
      for (std::size_t t = 0; t < n.idx.size(); ++t)
        for (int c = 0; c < ga.cols; ++c)
          ga.at(n.idx[t], c) += go.at(static_cast<int>(t), c);
      break;
    }

    case Op::kMeanRows: {
      Tensor2D& ga = g(n.a);
      const double inv = 1.0 / ga.rows;
      for (int r = 0; r < ga.rows; ++r)
        for (int c = 0; c < ga.cols; ++c) ga.at(r, c) += inv * go.at(0, c);
      break;
    }

    case Op::kTileRows: {
      Tensor2D& ga = g(n.a);
      for (int r = 0; r < n.val.rows; ++r)
        for (int c = 0; c < ga.cols; ++c) ga.at(0, c) += go.at(r, c);
      break;
    }

    case Op::kMatmul: {
      const Tensor2D& A = v(n.a);
      const Tensor2D& B = v(n.b);
      Tensor2D& ga = g(n.a);
      Tensor2D& gb = g(n.b);
      // dA = dC * B^T
      for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
          const double* grow = &go.data[static_cast<std::size_t>(i) * go.cols];
          const double* brow = &B.data[static_cast<std::size_t>(k) * B.cols];
          double s = 0.0;
          for (int j = 0; j < B.cols; ++j) s += grow[j] * brow[j];
          ga.at(i, k) += s;
        }
      // dB = A^T * dC
      for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
          const double aik = A.at(i, k);
          if (aik == 0.0) continue;
          const double* grow = &go.data[static_cast<std::size_t>(i) * go.cols];
          double* gbrow = &gb.data[static_cast<std::size_t>(k) * gb.cols];
          for (int j = 0; j < gb.cols; ++j) gbrow[j] += aik * grow[j];
        }
      break;
    }

    case Op::kMatmulNT: {
      const Tensor2D& A = v(n.a);
      const Tensor2D& B = v(n.b);
      Tensor2D& ga = g(n.a);
      Tensor2D& gb = g(n.b);
      // dA = dC * B
      for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.rows; ++j) {
          const double gij = go.at(i, j);
          if (gij == 0.0) continue;
          const double* brow = &B.data[static_cast<std::size_t>(j) * B.cols];
          double* garow = &ga.data[static_cast<std::size_t>(i) * ga.cols];
          for (int k = 0; k < B.cols; ++k) garow[k] += gij * brow[k];
        }
      // dB = dC^T * A
      for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.rows; ++j) {
          const double gij = go.at(i, j);
          if (gij == 0.0) continue;
          const double* arow = &A.data[static_cast<std::size_t>(i) * A.cols];
          double* gbrow = &gb.data[static_cast<std::size_t>(j) * gb.cols];
          for (int k = 0; k < A.cols; ++k) gbrow[k] += gij * arow[k];
        }
      break;
    }

    case Op::kAffine: {
      const Tensor2D& X = v(n.a);
      const Tensor2D& W = v(n.b);
      Tensor2D& gx = g(n.a);
      Tensor2D& gw = g(n.b);
      Tensor2D& gbias = g(n.c);
      for (int i = 0; i < X.rows; ++i)
        for (int k = 0; k < X.cols; ++k) {
          const double* grow = &go.data[static_cast<std::size_t>(i) * go.cols];
          const double* wrow = &W.data[static_cast<std::size_t>(k) * W.cols];
          double s = 0.0;
          for (int j = 0; j < W.cols; ++j) s += grow[j] * wrow[j];
          gx.at(i, k) += s;
        }
      for (int i = 0; i < X.rows; ++i)
        for (int k = 0; k < X.cols; ++k) {
          const double xik = X.at(i, k);
          if (xik == 0.0) continue;
          const double* grow = &go.data[static_cast<std::size_t>(i) * go.cols];
          double* gwrow = &gw.data[static_cast<std::size_t>(k) * gw.cols];
          for (int j = 0; j < gw.cols; ++j) gwrow[j] += xik * grow[j];
        }
      for (int i = 0; i < X.rows; ++i)
        for (int j = 0; j < go.cols; ++j) gbias.at(0, j) += go.at(i, j);
      break;
    }

    case Op::kSoftmaxRows: {
      Tensor2D& ga = g(n.a);
      for (int r = 0; r < n.val.rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < n.val.cols; ++c)
          dot += go.at(r, c) * n.val.at(r, c);
        for (int c = 0; c < n.val.cols; ++c)
          ga.at(r, c) += n.val.at(r, c) * (go.at(r, c) - dot);
      }
      break;
    }

    case Op::kBce: {
      const Tensor2D& Z = v(n.a);
      Tensor2D& ga = g(n.a);
      const double w = go.data[0] / Z.rows;
      for (int r = 0; r < Z.rows; ++r)
        ga.at(r, 0) += w * (sigmoid(Z.at(r, 0)) - n.aux[r]);
      break;
    }

    case Op::kCrossEntropy: {
      const Tensor2D& Z = v(n.a);
      Tensor2D& ga = g(n.a);
      if (Z.rows == 0) break;
      const double w = go.data[0] / Z.rows;
      for (int r = 0; r < Z.rows; ++r) {
        double m = Z.at(r, 0);
        for (int c = 1; c < Z.cols; ++c) m = std::max(m, Z.at(r, c));
        double lse = 0.0;
        for (int c = 0; c < Z.cols; ++c) lse += std::exp(Z.at(r, c) - m);
        for (int c = 0; c < Z.cols; ++c)
          ga.at(r, c) += w * (std::exp(Z.at(r, c) - m) / lse -
                              (c == n.idx[r] ? 1.0 : 0.0));
      }
      break;
    }

    case Op::kSmoothL1Rows: {
      if (n.idx.empty()) break;
      const Tensor2D& X = v(n.a);
      Tensor2D& ga = g(n.a);
      const double w = go.data[0] / n.idx.size();
      for (int r : n.idx)
        for (int c = 0; c < X.cols; ++c) {
          const double d = X.at(r, c) - n.aux[r * X.cols + c];
          ga.at(r, c) += w * std::clamp(d, -1.0, 1.0);
        }
      break;
    }

    case Op::kGiouRows: {
      if (n.idx.empty()) break;
      const Tensor2D& O = v(n.a);
      Tensor2D& ga = g(n.a);
      const double w = go.data[0] / n.idx.size();
      for (int r : n.idx) {
        const double c = n.aux[r];
        const double sraw = c - O.at(r, 0);
        const double eraw = c + O.at(r, 1);
        const double ps = std::clamp(sraw, 0.0, 1.0);
        const double pe = std::clamp(eraw, 0.0, 1.0);
        const auto vg = giou_loss_value_grad(ps, pe, n.s0, n.s1);
        if (sraw > 0.0 && sraw < 1.0) ga.at(r, 0) += w * -vg.d_start;
        if (eraw > 0.0 && eraw < 1.0) ga.at(r, 1) += w * vg.d_end;
      }
      break;
    }

    case Op::kEvidential: {
      const Tensor2D& R = v(n.a);
      Tensor2D& ga = g(n.a);
      const double w = go.data[0] * 0.5;
      const auto term = static_cast<EvTerm>(n.i0);
      double g4[4];
      for (int r : n.idx) {
        const double* row = &R.data[static_cast<std::size_t>(r) * 8];
        evidential_boundary_term(row, n.s0, term, n.s2, n.s3, g4);
        for (int c = 0; c < 4; ++c) ga.at(r, c) += w * g4[c];
        evidential_boundary_term(row + 4, n.s1, term, n.s2, n.s3, g4);
        for (int c = 0; c < 4; ++c) ga.at(r, 4 + c) += w * g4[c];
      }
      break;
    }

    case Op::kWeightedSum: {
      for (std::size_t i = 0; i < n.idx.size(); ++i)
        g(n.idx[i]).data[0] += n.aux[i] * go.data[0];
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

GradCheckReport grad_check(ParamStore& store,
                           const std::function<double(bool)>& loss, double h,
                           double tol, const std::string& corrupt_param) {
  store.zero_grads();
  const double f0 = loss(true);
  if (!std::isfinite(f0))
    throw NumericalError("grad_check: loss is not finite at the check point");

  std::vector<Tensor2D> analytic;
  analytic.reserve(store.entries().size());
  for (const auto& e : store.entries()) analytic.push_back(e.grad);
  if (!corrupt_param.empty()) {
    for (std::size_t p = 0; p < store.entries().size(); ++p)
      if (store.entries()[p].name == corrupt_param) analytic[p].data[0] += 1.0;
  }

  GradCheckReport report;
  report.h = h;
  report.tol = tol;
  for (std::size_t p = 0; p < store.entries().size(); ++p) {
    auto& e = store.entries()[p];
    // relative error over the whole tensor, so coordinates with near-zero
    // gradients do not drown the comparison in finite-difference roundoff
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      const double orig = e.value.data[i];
      e.value.data[i] = orig + h;
      const double f_plus = loss(false);
      e.value.data[i] = orig - h;
      const double f_minus = loss(false);
      e.value.data[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[p].data[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;

      // one-sided slopes disagreeing flags a kink that a symmetric central
      // difference would cancel out (|x| at 0 reports 0 = the subgradient)
      const double fwd = (f_plus - f0) / h;
      const double bwd = (f0 - f_minus) / h;
      const double kink =
          std::fabs(fwd - bwd) / std::max({1.0, std::fabs(fwd), std::fabs(bwd)});
      if (kink > 0.1) worst = std::max(worst, kink);
    }
    const double denom =
        std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    worst = std::max(worst, std::sqrt(diff2) / denom);
    report.params.push_back({e.name, worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  report.pass = report.max_rel_err <= tol;
  store.zero_grads();
  return report;
}

}  // namespace demr
