#pragma once

#include <mpcnn/numerics.hpp>

namespace mpcnn {

/// x_{k+1} = A x_k + B u_k
struct LinearSystem {
  Matrix a_mat;
  Matrix b_mat;

  Eigen::Index state_dim() const { return a_mat.rows(); }
  Eigen::Index input_dim() const { return b_mat.cols(); }

  void validate() const {
    require_dims(a_mat.rows() == a_mat.cols(), "system: A must be square");
    require_dims(b_mat.rows() == a_mat.rows(), "system: B rows must match A");
    if (!a_mat.allFinite() || !b_mat.allFinite()) throw Error(ErrorCode::InvalidArgument, "system: non-finite entries");
  }

  Vector step(const Vector& x, const Vector& u) const { return a_mat * x + b_mat * u; }
};

}  // namespace mpcnn
