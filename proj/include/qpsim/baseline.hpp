#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpsim/experiment.hpp"
#include "qpsim/numkit.hpp"

// Classical comparison suite: direct-detection state tomography with
// eigenvector extraction, the Davis-Kahan tightness experiment, and the
// closed-form sampling-complexity tables behind the ratio surfaces.

namespace qpsim::baseline {

using numkit::Complex;
using numkit::DensityOperator;
using numkit::Matrix;

enum class Reconstructor { kLinearInversion, kDilutedMLE };

struct TomographyConfig {
  std::uint64_t copies = 0;   // 0 + analytic => exact outcome probabilities
  bool analytic = false;
  Reconstructor reconstructor = Reconstructor::kLinearInversion;
  std::uint64_t seed = 0;
  int mle_iterations = 400;
  double mle_dilution = 0.5;
};

struct TomographyResult {
  DensityOperator rho_bar;
  double trace_error = 0.0;
  std::uint64_t copies_used = 0;
};

// Informationally complete single-copy design: the computational basis
// plus an X- and a Y-rotated basis for every index pair, copies allocated
// round-robin across settings.
TomographyResult simulate_tomography(const DensityOperator& rho, const TomographyConfig& cfg);

// number of settings in the design for dimension d
std::uint64_t design_settings(Eigen::Index d);

struct EigenErrorEntry {
  int index = 0;              // descending order: 0 is the top eigenvector
  double eigenvalue = 0.0;
  double eigenvalue_error = 0.0;
  double vector_deviation = 0.0;  // phase-aligned 2-norm
  std::optional<double> dk_bound;  // eps_tom / gap, when the gap resolves
  std::optional<double> ratio;
  double gap = 0.0;
};

struct EigenErrorReport {
  double trace_error = 0.0;  // eps_tom used in the bounds
  std::vector<EigenErrorEntry> entries;
};

EigenErrorReport eigen_error(const DensityOperator& rho, const DensityOperator& rho_bar,
                             int tracked = 2);

// Appendix-G construction: perturb toward (|V_pert> + |V2>)/sqrt(2) and
// compare the realized V2 deviation with eps_tom / (1 - r).
struct DkCell {
  double r = 0.0;
  double eps_tom = 0.0;
  double ratio = 0.0;
  bool valid = false;  // grid point satisfied eps_tom < 1 - r
};

std::vector<DkCell> dk_experiment(const std::vector<double>& r_grid,
                                  const std::vector<double>& eps_grid);
double dk_ratio(double r, double eps_tom);

struct ComplexityParams {
  double n = 0.0;       // pixel side N
  double r = 0.0;
  double gamma = 0.0;
  double eps_st = 0.0;
  double delta = 0.0;   // confusion budget entering the two-stage forms
  double const_qsp = 1.0;
  double const_tom = 1.0;
  double const_qsp_noisy = 1.0;
  double const_tom_full = 1.0;
};

struct ComplexityRow {
  double m_qsp = 0.0;
  double m_tom = 0.0;
  double m_tom_full = 0.0;
  double m_qsp_noisy = 0.0;
  double two_stage = 0.0;   // sequential-filter per-sample complexity
  double alt_scheme = 0.0;  // reweighted-unitary alternative
  double ratio_noise_free = 0.0;
  double ratio_noisy = 0.0;
};

// Closed forms with natural logarithms and explicit constants.
ComplexityRow complexity_tables(const ComplexityParams& p);

struct ResourceReport {
  std::uint64_t pixel_qubits = 0;
  std::uint64_t memory_qubits = 0;
  std::uint64_t compression_gates = 0;
  std::uint64_t processing_gates = 0;
  double gate_error_threshold = 0.0;  // at the given SNR
};

ResourceReport resource_counts(int n, double eps_st, double snr = 10.0,
                               double processing_const = 1.0);

}  // namespace qpsim::baseline
