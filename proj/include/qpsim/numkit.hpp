#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

// Dense complex linear algebra used by every other component: tensor
// products, partial traces, Hermitian spectral decompositions and the
// distance measures the estimators report.

namespace qpsim::numkit {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

inline constexpr double kHermTol = 1e-12;        // entrywise |A - A^dag|
inline constexpr double kEigClampTol = 1e-10;    // spectrum floor before error
inline constexpr std::int64_t kKronMaxEntries = std::int64_t(1) << 20;

// Single-photon pure state over the pixel mode space. norm_deficit keeps
// 1 - eta from pixelation so detection efficiency survives normalization.
struct PureState {
  Vector amplitudes;
  double norm_deficit = 0.0;

  PureState() = default;
  explicit PureState(Vector amps, double deficit = 0.0);
  Eigen::Index dim() const { return amplitudes.size(); }
};

// Trace-one PSD operator. Construct through make_density so the trace and
// spectrum checks (with the small-negative clamp) always run.
struct DensityOperator {
  Matrix mat;
  Eigen::Index dim() const { return mat.rows(); }
};

struct EighResult {
  RealVector values;   // ascending
  Matrix vectors;      // columns, orthonormal
};

bool is_hermitian(const Matrix& a, double tol = kHermTol);

// (a (x) b), guarded against runaway dimensions.
Matrix kron(const Matrix& a, const Matrix& b,
            std::int64_t max_entries = kKronMaxEntries);

// Trace out one factor of a bipartite operator. dims = (d1, d2) with
// joint side d1*d2; keep selects the surviving subsystem (0 or 1).
Matrix partial_trace(const Matrix& joint, std::pair<Eigen::Index, Eigen::Index> dims,
                     int keep);

// Hermitian eigendecomposition; input is symmetrized to absorb roundoff,
// anything beyond the Hermiticity tolerance is rejected.
EighResult eigh(const Matrix& h);

// exp(i * scale * h) for Hermitian h, via the spectral decomposition.
Matrix herm_exp(const Matrix& h, double scale);

double trace_distance(const DensityOperator& a, const DensityOperator& b);
double trace_distance(const Matrix& a, const Matrix& b);

double fidelity_pure(const PureState& v, const PureState& w);

// |<v| rho |v>| for a unit vector against a density matrix.
double state_fidelity(const Vector& v, const Matrix& rho);

DensityOperator make_density(const Matrix& m);
DensityOperator pure_density(const Vector& v);

Matrix identity(Eigen::Index n);

}  // namespace qpsim::numkit
