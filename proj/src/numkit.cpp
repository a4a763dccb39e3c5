#include "qpsim/numkit.hpp"

#include <cmath>

namespace qpsim::numkit {

PureState::PureState(Vector amps, double deficit) : norm_deficit(deficit) {
  const double n2 = amps.squaredNorm();
  if (n2 <= 0.0) {
    throw std::invalid_argument("PureState: zero vector");
  }
  if (std::abs(n2 - 1.0) > 1e-10) {
    amps /= std::sqrt(n2);
  }
  amplitudes = std::move(amps);
}

bool is_hermitian(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, a.cwiseAbs().maxCoeff());
}

Matrix kron(const Matrix& a, const Matrix& b, std::int64_t max_entries) {
  const std::int64_t rows = std::int64_t(a.rows()) * b.rows();
  const std::int64_t cols = std::int64_t(a.cols()) * b.cols();
  if (rows * cols > max_entries) {
    throw std::length_error("kron: result exceeds configured entry budget");
  }
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix partial_trace(const Matrix& joint, std::pair<Eigen::Index, Eigen::Index> dims,
                     int keep) {
  const auto [d1, d2] = dims;
  if (joint.rows() != joint.cols() || joint.rows() != d1 * d2) {
    throw std::invalid_argument("partial_trace: joint side must equal d1*d2");
  }
  if (keep != 0 && keep != 1) {
    throw std::invalid_argument("partial_trace: keep must be 0 or 1");
  }
  if (keep == 0) {
    Matrix out = Matrix::Zero(d1, d1);
    for (Eigen::Index i = 0; i < d1; ++i)
      for (Eigen::Index j = 0; j < d1; ++j)
        for (Eigen::Index k = 0; k < d2; ++k)
          out(i, j) += joint(i * d2 + k, j * d2 + k);
    return out;
  }
  Matrix out = Matrix::Zero(d2, d2);
  for (Eigen::Index k = 0; k < d1; ++k)
    out += joint.block(k * d2, k * d2, d2, d2);
  return out;
}

EighResult eigh(const Matrix& h) {
  if (!is_hermitian(h)) {
    throw std::invalid_argument("eigh: input is not Hermitian within tolerance");
  }
  Matrix sym = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigh: eigensolver failed to converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

Matrix herm_exp(const Matrix& h, double scale) {
  EighResult e = eigh(h);
  Vector phases(e.values.size());
  for (Eigen::Index i = 0; i < e.values.size(); ++i) {
    phases(i) = std::polar(1.0, scale * e.values(i));
  }
  return e.vectors * phases.asDiagonal() * e.vectors.adjoint();
}

double trace_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("trace_distance: dimension mismatch");
  }
  EighResult e = eigh(a - b);
  return 0.5 * e.values.cwiseAbs().sum();
}

double trace_distance(const DensityOperator& a, const DensityOperator& b) {
  return trace_distance(a.mat, b.mat);
}

double fidelity_pure(const PureState& v, const PureState& w) {
  if (v.dim() != w.dim()) {
    throw std::invalid_argument("fidelity_pure: dimension mismatch");
  }
  return std::norm(v.amplitudes.dot(w.amplitudes));
}

double state_fidelity(const Vector& v, const Matrix& rho) {
  return std::real(v.dot(rho * v));
}

DensityOperator make_density(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("make_density: matrix not square");
  }
  if (!is_hermitian(m, 1e-9)) {
    throw std::invalid_argument("make_density: matrix not Hermitian");
  }
  Matrix sym = 0.5 * (m + m.adjoint());
  const double tr = std::real(sym.trace());
  if (std::abs(tr - 1.0) > 1e-8) {
    throw std::invalid_argument("make_density: trace deviates from one");
  }
  sym /= tr;
  EighResult e = eigh(sym);
  const double lo = e.values.minCoeff();
  if (lo < -1e-9) {
    throw std::invalid_argument("make_density: spectrum negative beyond clamp tolerance");
  }
  if (lo < 0.0) {
    // clamp the roundoff-negative tail and renormalize
    RealVector clamped = e.values.cwiseMax(0.0);
    clamped /= clamped.sum();
    Matrix rebuilt = e.vectors * clamped.cast<Complex>().asDiagonal() * e.vectors.adjoint();
    return DensityOperator{std::move(rebuilt)};
  }
  return DensityOperator{std::move(sym)};
}

DensityOperator pure_density(const Vector& v) {
  const double n2 = v.squaredNorm();
  if (n2 <= 0.0) throw std::invalid_argument("pure_density: zero vector");
  Matrix m = (v * v.adjoint()) / n2;
  return DensityOperator{std::move(m)};
}

Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

}  // namespace qpsim::numkit
