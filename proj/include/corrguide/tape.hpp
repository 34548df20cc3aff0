// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation tape over dense matrices. Each call
// into the guidance gradient owns a private Tape; nodes record the forward
// value and enough context to push adjoints back to their parents.
#pragma once

#include <memory>
#include <vector>

#include "corrguide/types.hpp"

namespace corrguide::guide {

class Tape {
 public:
  using NodeId = int;
  struct Node;

  Tape();
  ~Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;

  // Leaf tracked for gradients.
  NodeId input(Matrix value);
  // Leaf without gradient.
  NodeId constant(Matrix value);

  // [A | B] column concatenation.
  NodeId hcat(NodeId a, NodeId b);
  // Mean over scale x scale token blocks of a stitched grid; rows of x are
  // tokens of `fine`.
  NodeId block_mean(NodeId x, GridDims fine, int scale);
  // x * W with a constant weight matrix.
  NodeId matmul_const(NodeId x, Matrix w);
  // A * B^T.
  NodeId matmul_bt(NodeId a, NodeId b);
  // (x + bias) * scale with a constant bias (nullptr = zero bias).
  NodeId add_const_scale(NodeId x, const Matrix* bias, double scale);
  NodeId row_softmax(NodeId x);
  // Query-replicating / key-mass-splitting upsample from (cq, ck) to (fq, fk).
  NodeId attention_upsample(NodeId x, GridDims coarse_query, GridDims coarse_key,
                            GridDims fine_query, GridDims fine_key);
  // Gather of the given row/column index sets.
  NodeId submatrix(NodeId x, std::vector<int> rows, std::vector<int> cols);
  // Per-row standardization to zero mean and unit standard deviation with an
  // epsilon guard on the denominator.
  NodeId row_standardize(NodeId x, double eps);
  // Scalar (1x1) weighted binary cross-entropy of sigmoid(x) against one-hot
  // targets, restricted to active rows, positives weighted by pos_weight, the
  // whole sum divided by denom.
  NodeId weighted_bce(NodeId x, Matrix targets, std::vector<char> active_rows, double pos_weight,
                      double denom);
  // Scalar sum.
  NodeId add_scalars(const std::vector<NodeId>& ids);

  const Matrix& value(NodeId id) const;

  // Reverse pass from a scalar node; returns the adjoint at `wrt`.
  Matrix gradient(NodeId loss, NodeId wrt);

  void accumulate(NodeId id, const Matrix& grad);

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<Matrix> adjoints_;

  NodeId push(std::unique_ptr<Node> node);
};

}  // namespace corrguide::guide
