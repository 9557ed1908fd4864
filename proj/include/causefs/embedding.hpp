#pragma once

#include <cmath>
#include <string>

#include "causefs/common.hpp"
#include "causefs/graphs.hpp"

namespace causefs {

/// Orthonormal cluster embedding: F is n x h with F'F = I.
struct Embedding {
  Matrix F;
  int h = 0;
};

namespace detail {

/// Orthonormal polar factor U V' of M via thin SVD. Maximizes tr(F'M) over
/// F'F = I.
inline Matrix polar_orthonormal(const Matrix& M) {
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Flips eigenvector signs so the first entry of visible magnitude is
/// positive; eigensolvers are free to return either sign.
inline void fix_column_signs(Matrix& F) {
  for (Index c = 0; c < F.cols(); ++c) {
    for (Index r = 0; r < F.rows(); ++r) {
      if (std::abs(F(r, c)) > 1e-12) {
        if (F(r, c) < 0) F.col(c) = -F.col(c);
        break;
      }
    }
  }
}

}  // namespace detail

/// Bottom-h eigenvectors of the Laplacian, sign-normalized.
inline Embedding spectral_init(const Laplacian& lap, int h) {
  const Index n = lap.L.rows();
  require(lap.L.cols() == n, "spectral_init: Laplacian must be square");
  require(h >= 1 && h <= n, "spectral_init: h out of range, need 1 <= h <= n");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (lap.L + lap.L.transpose()));
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spectral_init: eigensolver failed on a " +
                             std::to_string(n) + "x" + std::to_string(n) +
                             " Laplacian with Frobenius norm " +
                             std::to_string(lap.L.norm()));
  Embedding emb;
  emb.F = es.eigenvectors().leftCols(h);
  emb.h = h;
  detail::fix_column_signs(emb.F);
  return emb;
}

/// Minimizes tr(F'AF) - 2 tr(F'B) over F'F = I by iterated polar steps on
/// the shifted matrix (c I - A) with c = max row absolute sum + 1, which
/// keeps the shifted matrix PSD and every step non-increasing. Stops on
/// relative objective change below tol or after max_iter sweeps.
inline Embedding gpi_solve(const Matrix& A, const Matrix& B, const Embedding& init,
                           int max_iter = 100, double tol = 1e-8) {
  const Index n = A.rows();
  require(A.cols() == n, "gpi_solve: A must be square");
  require(B.rows() == n && B.cols() == init.F.cols(),
          "gpi_solve: B must be n x h");
  require(init.F.rows() == n, "gpi_solve: initial F must be n x h");
  require(max_iter >= 1, "gpi_solve: max_iter must be at least 1");

  const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8)
    throw std::invalid_argument("gpi_solve: matrix not symmetric, asymmetry " +
                                std::to_string(asym));

  const double shift = A.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
  Matrix shifted = -A;
  shifted.diagonal().array() += shift;

  Matrix F = init.F;
  auto objective = [&](const Matrix& G) {
    return (G.cwiseProduct(A * G)).sum() - 2.0 * (G.cwiseProduct(B)).sum();
  };
  double prev = objective(F);
  for (int it = 0; it < max_iter; ++it) {
    F = detail::polar_orthonormal(shifted * F + B);
    const double cur = objective(F);
    if (std::abs(cur - prev) <= tol * std::max(std::abs(prev), 1e-12)) {
      prev = cur;
      break;
    }
    prev = cur;
  }
  Embedding out;
  out.F = F;
  out.h = static_cast<int>(F.cols());
  return out;
}

}  // namespace causefs
