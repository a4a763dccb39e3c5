#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qpsim/experiment.hpp"
#include "qpsim/numkit.hpp"
#include "qpsim/qpca.hpp"

// The measurement procedure: eigenvalue estimation from filter labels, the
// (b, h) eigenvector algebra, SWAP tests, the reference-observable protocol
// and block-encoded off-diagonal extraction, plus b-estimation from a
// functional prior.

namespace qpsim::est {

using numkit::Complex;
using numkit::DensityOperator;
using numkit::Matrix;
using numkit::Vector;

enum class Mode { kAnalytic, kShot };
inline const char* mode_name(Mode m) { return m == Mode::kAnalytic ? "analytic" : "shot"; }

// Links the source states to the PSF eigenvectors. c_tilde holds the
// eigenvectors over the (nonorthogonal) source states, c the inverse;
// both are real under the h >= 0 phase convention.
struct EigenModel {
  double r = 0.0;  // top eigenvalue
  double b = 0.0;
  double h = 0.0;
  double a = 0.0;  // 1 - h^2
  double c_tilde[2][2] = {};  // V_k = sum_j c_tilde[j][k] psi_j
  double c[2][2] = {};        // psi_k = sum_j c[j][k] V_j
  double norm[2] = {};        // the N_k normalizations

  std::string dump() const;
};

// Inverts r = r(b, h) for h and builds the eigenvector coefficients;
// throws on inconsistent (r, b) pairs, reporting the offending h^2.
EigenModel solve_model(double r, double b);

struct Observable {
  std::string name;
  Matrix matrix;      // Hermitian, spectral norm <= 1
  double scale = 1.0;  // multiply estimates by this to restore units

  Observable() = default;
  Observable(std::string name_, const Matrix& raw);
};

struct OverlapSet {
  double v11 = 0.0;
  double v22 = 0.0;
  Complex v12;  // <V1|O|V2> in the real-coefficient gauge
  std::string source;

  std::string dump() const;
};

struct REstimate {
  double r_hat = 0.0;
  double stderr = 0.0;
  std::size_t count = 0;
  bool swapped = false;  // labels flipped to keep r_hat >= 1/2
};

// Bernoulli estimate of the top eigenvalue from filter labels (true =
// "V1" label). Swaps the convention when the frequency lands below 1/2.
REstimate estimate_r(const std::vector<bool>& labels);

// <psi_which | O | psi_which> from eigenbasis overlaps (Eq. of the
// two-source decomposition); which is 1 or 2.
double reconstruct_observable(const EigenModel& model, const OverlapSet& overlaps,
                              int which);

// ---------------------------------------------------------------------
// SWAP test on two registers (pure or mixed), ancilla phase omega.

struct SwapTestResult {
  double p0 = 0.0;       // exact ancilla-0 probability
  double p0_hat = 0.0;   // empirical over `shots` (equals p0 when shots == 0)
  std::uint64_t shots = 0;
  DensityOperator branch0;  // post-measurement joint states
  DensityOperator branch1;
};

SwapTestResult swap_test(const Matrix& a, const Matrix& b, Complex omega,
                         std::uint64_t shots, exp::Rng& rng);

// expectation of a Hermitian observable on a state, optionally sampled
struct MeasuredValue {
  double value = 0.0;
  double stderr = 0.0;
  std::uint64_t shots = 0;
};
MeasuredValue measure_expectation(const Matrix& obs, const Matrix& state,
                                  std::uint64_t shots, Mode mode, exp::Rng& rng);

// ---------------------------------------------------------------------
// Block-encoded off-diagonal extraction (reference observable).

struct SignPrior {
  int re_sign = +1;
  int im_sign = +1;
  double im_over_re = 0.0;  // model ratio Im/Re; 0 means real kappa_ref
};

struct BlockEncodeResult {
  Complex kappa_ref;          // |kappa| combined with the prior phase
  double kappa_abs = 0.0;     // protocol-measured magnitude
  double success_prob = 0.0;  // predicted ||O_ref |V1>||^4
  std::uint64_t attempts = 0;
  std::uint64_t successes = 0;
  double v11_ref = 0.0;
  double opsq = 0.0;  // ||O_ref|V1>||^2 estimate
};

// v1_state is the sampled V1 branch (its dominant eigenvector feeds the
// encoding); rho supplies the W-branch preparation.
BlockEncodeResult block_encode_offdiag(const Matrix& v1_state, const Matrix& rho,
                                       const Observable& o_ref, const SignPrior& prior,
                                       std::uint64_t shots, Mode mode, exp::Rng& rng);

// ---------------------------------------------------------------------
// Reference-observable protocol: recovers <V2|O|V2> and <V1|O|V2> from
// SWAP-branch measurements, using only V1 samples and rho copies.

struct ReferenceProtocolResult {
  OverlapSet overlaps;       // for O
  double h_i = 0.0;          // odd interference term
  double h_1 = 0.0;          // even interference term
  double t_cross = 0.0;      // T = v11_ref v22_O + v11_O v22_ref
  std::uint64_t rho_copies = 0;
  std::uint64_t v1_samples = 0;
};

ReferenceProtocolResult reference_protocol(const Matrix& v1_state, const Matrix& rho,
                                           double r, const OverlapSet& ref_overlaps,
                                           const Observable& o_ref, const Observable& o,
                                           std::uint64_t shots, Mode mode, exp::Rng& rng,
                                           double kappa_floor = 1e-3);

// ---------------------------------------------------------------------
// Appendix-C pathway: solve for b from a functional relation
// M_{O_F, psi2} = F(M_{O_F, psi1}).

struct BInputs {
  double r = 0.0;
  double m_rho = 0.0;  // Tr(O_F rho)
  double m_v1 = 0.0;   // <V1|O_F|V1>
  double m_v2 = 0.0;   // <V2|O_F|V2>
};

struct BRoot {
  double b = 0.0;
  double m1 = 0.0;  // M_{O_F, psi1} at the root
  double residual = 0.0;
  bool nontrivial = true;  // the identifiability condition held here
};

struct BSolveReport {
  std::vector<BRoot> roots;
  bool ambiguous = false;  // zero or multiple roots (or condition violated)
};

struct BSolverConfig {
  int scan_points = 1000;
  int bisect_iters = 80;
  double value_lo = -1.0;  // bracket for M1 (observable spectral range)
  double value_hi = 1.0;
  double nontrivial_tol = 1e-9;
};

BSolveReport estimate_b(const BInputs& in, const std::function<double(double)>& F,
                        const BSolverConfig& cfg);

// ---------------------------------------------------------------------
// Five-step pipeline binding the above; states come from a supply that is
// either the spectral-oracle limit or a circuit-filter channel.

struct EigenSupply {
  double p_v1 = 0.0;       // probability of the V1 label
  Matrix v1_state;         // conditional states
  Matrix v2_state;
};

EigenSupply ideal_supply(const DensityOperator& rho);

struct PipelineConfig {
  double b_known = 0.0;
  std::uint64_t shots = 10000;
  std::uint64_t label_count = 4000;
  Mode mode = Mode::kAnalytic;
  SignPrior prior;
  double kappa_floor = 1e-3;
};

struct PipelineResult {
  double r_hat = 0.0;
  EigenModel model;
  OverlapSet ref_overlaps;
  OverlapSet obs_overlaps;
  double value_psi1 = 0.0;  // reconstructed <psi1|O|psi1>
  double value_psi2 = 0.0;  // reconstructed <psi2|O|psi2>
  std::uint64_t rho_copies = 0;
  std::uint64_t v1_samples = 0;
  std::uint64_t v2_samples = 0;
};

PipelineResult run_measurement_pipeline(const DensityOperator& rho,
                                        const EigenSupply& supply,
                                        const Observable& o, const Observable& o_ref,
                                        const PipelineConfig& cfg, exp::Rng& rng);

}  // namespace qpsim::est
