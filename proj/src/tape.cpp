// SPDX-License-Identifier: Apache-2.0
#include "corrguide/tape.hpp"

#include <cmath>
#include <utility>

namespace corrguide::guide {

struct Tape::Node {
  Matrix value;
  std::vector<NodeId> parents;
  virtual ~Node() = default;
  virtual void backward(const Matrix& /*grad*/, Tape& /*tape*/) const {}
};

namespace {

using NodeId = Tape::NodeId;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LeafNode : Tape::Node {};

struct HCatNode : Tape::Node {
  Eigen::Index left_cols = 0;
  void backward(const Matrix& grad, Tape& tape) const override {
    tape.accumulate(parents[0], grad.leftCols(left_cols));
    tape.accumulate(parents[1], grad.rightCols(grad.cols() - left_cols));
  }
};

struct BlockMeanNode : Tape::Node {
  GridDims fine;
  int scale = 1;
  void backward(const Matrix& grad, Tape& tape) const override {
    const int coarse_cols = fine.cols / scale;
    const double inv = 1.0 / (static_cast<double>(scale) * scale);
    Matrix out = Matrix::Zero(fine.tokens(), grad.cols());
    for (int i = 0; i < fine.rows; ++i)
      for (int j = 0; j < fine.cols; ++j)
        out.row(i * fine.cols + j) = grad.row((i / scale) * coarse_cols + (j / scale)) * inv;
    tape.accumulate(parents[0], out);
  }
};

struct MatmulConstNode : Tape::Node {
  Matrix w;
  void backward(const Matrix& grad, Tape& tape) const override {
    tape.accumulate(parents[0], grad * w.transpose());
  }
};

struct MatmulBtNode : Tape::Node {
  Matrix a, b;  // saved operands
  void backward(const Matrix& grad, Tape& tape) const override {
    tape.accumulate(parents[0], grad * b);
    tape.accumulate(parents[1], grad.transpose() * a);
  }
};

struct AddConstScaleNode : Tape::Node {
  double scale = 1.0;
  void backward(const Matrix& grad, Tape& tape) const override {
    tape.accumulate(parents[0], grad * scale);
  }
};

struct RowSoftmaxNode : Tape::Node {
  void backward(const Matrix& grad, Tape& tape) const override {
    Matrix out(value.rows(), value.cols());
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      const double dot = grad.row(r).dot(value.row(r));
      out.row(r) = (value.row(r).array() * (grad.row(r).array() - dot)).matrix();
    }
    tape.accumulate(parents[0], out);
  }
};

struct UpsampleNode : Tape::Node {
  GridDims cq, ck, fq, fk;
  void backward(const Matrix& grad, Tape& tape) const override {
    const int qr = fq.rows / cq.rows;
    const int qc = fq.cols / cq.cols;
    const int kr = fk.rows / ck.rows;
    const int kc = fk.cols / ck.cols;
    const double split = 1.0 / (static_cast<double>(kr) * kc);
    Matrix out = Matrix::Zero(cq.tokens(), ck.tokens());
    for (int fi = 0; fi < fq.rows; ++fi)
      for (int fj = 0; fj < fq.cols; ++fj) {
        const int src_q = (fi / qr) * cq.cols + (fj / qc);
        const int row = fi * fq.cols + fj;
        for (int gi = 0; gi < fk.rows; ++gi)
          for (int gj = 0; gj < fk.cols; ++gj)
            out(src_q, (gi / kr) * ck.cols + (gj / kc)) +=
                grad(row, gi * fk.cols + gj) * split;
      }
    tape.accumulate(parents[0], out);
  }
};

struct SubmatrixNode : Tape::Node {
  std::vector<int> rows, cols;
  Eigen::Index src_rows = 0, src_cols = 0;
  void backward(const Matrix& grad, Tape& tape) const override {
    Matrix out = Matrix::Zero(src_rows, src_cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c)
        out(rows[r], cols[c]) += grad(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    tape.accumulate(parents[0], out);
  }
};

struct RowStandardizeNode : Tape::Node {
  Matrix centered;     // x - mu per row
  Vector inv_denom;    // 1 / (sigma + eps)
  Vector sigma;
  void backward(const Matrix& grad, Tape& tape) const override {
    const auto n = static_cast<double>(value.cols());
    Matrix out(value.rows(), value.cols());
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      const double c = inv_denom[r];
      const double gmean = grad.row(r).mean();
      // d/dx of (x - mu) / (sigma + eps); the sigma path vanishes for
      // (numerically) constant rows.
      Eigen::RowVectorXd dt = (grad.row(r).array() - gmean).matrix() * c;
      if (sigma[r] > 1e-300) {
        const double s_g = grad.row(r).dot(centered.row(r));
        dt -= centered.row(r) * (c * c * s_g / (n * sigma[r]));
      }
      out.row(r) = dt;
    }
    tape.accumulate(parents[0], out);
  }
};

struct WeightedBceNode : Tape::Node {
  Matrix u;  // pre-sigmoid inputs
  Matrix targets;
  std::vector<char> active;
  double pos_weight = 1.0;
  double denom = 1.0;
  void backward(const Matrix& grad, Tape& tape) const override {
    const double g = grad(0, 0) / denom;
    Matrix out = Matrix::Zero(u.rows(), u.cols());
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
      if (!active[static_cast<std::size_t>(r)]) continue;
      for (Eigen::Index c = 0; c < u.cols(); ++c) {
        const double e = targets(r, c);
        // d/du of [w e softplus(-u) + (1 - e) softplus(u)]
        out(r, c) = g * (-pos_weight * e * sigmoid(-u(r, c)) + (1.0 - e) * sigmoid(u(r, c)));
      }
    }
    tape.accumulate(parents[0], out);
  }
};

struct AddScalarsNode : Tape::Node {
  void backward(const Matrix& grad, Tape& tape) const override {
    for (const NodeId p : parents) tape.accumulate(p, grad);
  }
};

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tape::Tape() = default;
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

Tape::NodeId Tape::push(std::unique_ptr<Node> node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::accumulate(NodeId id, const Matrix& grad) {
  if (adjoints_[id].size() == 0)
    adjoints_[id] = grad;
  else
    adjoints_[id] += grad;
}

Tape::NodeId Tape::input(Matrix value) {
  auto node = std::make_unique<LeafNode>();
  node->value = std::move(value);
  return push(std::move(node));
}

Tape::NodeId Tape::constant(Matrix value) {
  auto node = std::make_unique<LeafNode>();
  node->value = std::move(value);
  return push(std::move(node));
}

Tape::NodeId Tape::hcat(NodeId a, NodeId b) {
  const Matrix& va = nodes_[a]->value;
  const Matrix& vb = nodes_[b]->value;
  if (va.rows() != vb.rows()) throw ArgumentError("Tape::hcat: row count mismatch");
  auto node = std::make_unique<HCatNode>();
  node->left_cols = va.cols();
  node->value.resize(va.rows(), va.cols() + vb.cols());
  node->value << va, vb;
  node->parents = {a, b};
  return push(std::move(node));
}

Tape::NodeId Tape::block_mean(NodeId x, GridDims fine, int scale) {
  const Matrix& v = nodes_[x]->value;
  if (v.rows() != fine.tokens()) throw ArgumentError("Tape::block_mean: row count mismatch");
  if (scale < 1 || fine.rows % scale != 0 || fine.cols % scale != 0)
    throw ArgumentError("Tape::block_mean: scale must divide the grid");
  auto node = std::make_unique<BlockMeanNode>();
  node->fine = fine;
  node->scale = scale;
  const int cr = fine.rows / scale;
  const int cc = fine.cols / scale;
  node->value = Matrix::Zero(cr * cc, v.cols());
  for (int i = 0; i < fine.rows; ++i)
    for (int j = 0; j < fine.cols; ++j)
      node->value.row((i / scale) * cc + (j / scale)) += v.row(i * fine.cols + j);
  node->value /= static_cast<double>(scale) * scale;
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::matmul_const(NodeId x, Matrix w) {
  auto node = std::make_unique<MatmulConstNode>();
  node->value = nodes_[x]->value * w;
  node->w = std::move(w);
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::matmul_bt(NodeId a, NodeId b) {
  auto node = std::make_unique<MatmulBtNode>();
  node->a = nodes_[a]->value;
  node->b = nodes_[b]->value;
  node->value = node->a * node->b.transpose();
  node->parents = {a, b};
  return push(std::move(node));
}

Tape::NodeId Tape::add_const_scale(NodeId x, const Matrix* bias, double scale) {
  const Matrix& v = nodes_[x]->value;
  if (bias != nullptr && (bias->rows() != v.rows() || bias->cols() != v.cols()))
    throw ArgumentError("Tape::add_const_scale: bias shape mismatch");
  auto node = std::make_unique<AddConstScaleNode>();
  node->scale = scale;
  node->value = bias != nullptr ? ((v + *bias) * scale).eval() : (v * scale).eval();
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::row_softmax(NodeId x) {
  const Matrix& v = nodes_[x]->value;
  auto node = std::make_unique<RowSoftmaxNode>();
  node->value.resize(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    Eigen::RowVectorXd e = (v.row(r).array() - m).exp();
    node->value.row(r) = e / e.sum();
  }
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::attention_upsample(NodeId x, GridDims coarse_query, GridDims coarse_key,
                                      GridDims fine_query, GridDims fine_key) {
  const Matrix& v = nodes_[x]->value;
  if (v.rows() != coarse_query.tokens() || v.cols() != coarse_key.tokens())
    throw ArgumentError("Tape::attention_upsample: value shape mismatch");
  if (fine_query.rows % coarse_query.rows != 0 || fine_query.cols % coarse_query.cols != 0 ||
      fine_key.rows % coarse_key.rows != 0 || fine_key.cols % coarse_key.cols != 0)
    throw ArgumentError("Tape::attention_upsample: non-integer scale ratio");
  auto node = std::make_unique<UpsampleNode>();
  node->cq = coarse_query;
  node->ck = coarse_key;
  node->fq = fine_query;
  node->fk = fine_key;
  const int qr = fine_query.rows / coarse_query.rows;
  const int qc = fine_query.cols / coarse_query.cols;
  const int kr = fine_key.rows / coarse_key.rows;
  const int kc = fine_key.cols / coarse_key.cols;
  const double split = 1.0 / (static_cast<double>(kr) * kc);
  node->value = Matrix::Zero(fine_query.tokens(), fine_key.tokens());
  for (int fi = 0; fi < fine_query.rows; ++fi)
    for (int fj = 0; fj < fine_query.cols; ++fj) {
      const int src_q = (fi / qr) * coarse_query.cols + (fj / qc);
      const int row = fi * fine_query.cols + fj;
      for (int gi = 0; gi < fine_key.rows; ++gi)
        for (int gj = 0; gj < fine_key.cols; ++gj)
          node->value(row, gi * fine_key.cols + gj) =
              v(src_q, (gi / kr) * coarse_key.cols + (gj / kc)) * split;
    }
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::submatrix(NodeId x, std::vector<int> rows, std::vector<int> cols) {
  const Matrix& v = nodes_[x]->value;
  auto node = std::make_unique<SubmatrixNode>();
  node->src_rows = v.rows();
  node->src_cols = v.cols();
  node->value.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      node->value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v(rows[r], cols[c]);
  node->rows = std::move(rows);
  node->cols = std::move(cols);
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::row_standardize(NodeId x, double eps) {
  const Matrix& v = nodes_[x]->value;
  auto node = std::make_unique<RowStandardizeNode>();
  node->centered.resize(v.rows(), v.cols());
  node->inv_denom.resize(v.rows());
  node->sigma.resize(v.rows());
  node->value.resize(v.rows(), v.cols());
  const auto n = static_cast<double>(v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mu = v.row(r).mean();
    node->centered.row(r) = v.row(r).array() - mu;
    const double var = node->centered.row(r).squaredNorm() / n;
    node->sigma[r] = std::sqrt(var);
    node->inv_denom[r] = 1.0 / (node->sigma[r] + eps);
    node->value.row(r) = node->centered.row(r) * node->inv_denom[r];
  }
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::weighted_bce(NodeId x, Matrix targets, std::vector<char> active_rows,
                                double pos_weight, double denom) {
  const Matrix& v = nodes_[x]->value;
  if (targets.rows() != v.rows() || targets.cols() != v.cols())
    throw ArgumentError("Tape::weighted_bce: target shape mismatch");
  if (static_cast<Eigen::Index>(active_rows.size()) != v.rows())
    throw ArgumentError("Tape::weighted_bce: active row flags mismatch");
  auto node = std::make_unique<WeightedBceNode>();
  node->u = v;
  node->pos_weight = pos_weight;
  node->denom = denom;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (!active_rows[static_cast<std::size_t>(r)]) continue;
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      const double e = targets(r, c);
      loss += pos_weight * e * softplus(-v(r, c)) + (1.0 - e) * softplus(v(r, c));
    }
  }
  node->value = Matrix::Constant(1, 1, loss / denom);
  node->targets = std::move(targets);
  node->active = std::move(active_rows);
  node->parents = {x};
  return push(std::move(node));
}

Tape::NodeId Tape::add_scalars(const std::vector<NodeId>& ids) {
  if (ids.empty()) throw ArgumentError("Tape::add_scalars: no terms");
  auto node = std::make_unique<AddScalarsNode>();
  double total = 0.0;
  for (const NodeId id : ids) {
    if (nodes_[id]->value.size() != 1)
      throw ArgumentError("Tape::add_scalars: non-scalar term");
    total += nodes_[id]->value(0, 0);
  }
  node->value = Matrix::Constant(1, 1, total);
  node->parents = ids;
  return push(std::move(node));
}

const Matrix& Tape::value(NodeId id) const { return nodes_[id]->value; }

Matrix Tape::gradient(NodeId loss, NodeId wrt) {
  if (nodes_[loss]->value.size() != 1)
    throw ArgumentError("Tape::gradient: loss must be scalar");
  adjoints_.assign(nodes_.size(), Matrix());
  adjoints_[loss] = Matrix::Constant(1, 1, 1.0);
  for (NodeId id = loss; id >= 0; --id) {
    if (adjoints_[id].size() == 0) continue;
    nodes_[id]->backward(adjoints_[id], *this);
  }
  if (adjoints_[wrt].size() == 0)
    return Matrix::Zero(nodes_[wrt]->value.rows(), nodes_[wrt]->value.cols());
  return adjoints_[wrt];
}

}  // namespace corrguide::guide
