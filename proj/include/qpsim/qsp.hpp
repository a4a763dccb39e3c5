#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qpsim/qpca.hpp"

// Eigenbasis sorting: a periodic-step trigonometric filter applied through
// quantum signal processing. Two fidelities are first class: an exact
// spectral oracle (ideal) and the full circuit with photon accounting.

namespace qpsim::qsp {

using numkit::Complex;
using numkit::DensityOperator;
using numkit::Matrix;
using numkit::Vector;

// Step geometry: the approximation is uncontrolled only inside
// (s - delta_half, s + delta_half) and its pi-translates.
struct StepSpec {
  double shift = 0.0;       // s in (0, pi)
  double halfwidth = 0.0;   // forbidden-zone half width
  double flatness = 0.0;    // delta: |f - step| bound outside the zone

  void validate() const;
};

// Exact periodic Heaviside target: 0 on (s - pi, s), 1 on (s, s + pi),
// 1/2 at the jumps, continued with period 2 pi.
double step_function(double tau, double shift);

// f(tau) = sum_{j=-L..L} c_j e^{i j tau}; coefficients stored with the
// j = -L entry first. Values are real for the construction used here.
struct TrigPolynomial {
  int degree = 0;
  std::vector<Complex> coeffs;  // size 2*degree + 1

  Complex eval(double tau) const;
  // uniform grid over [-pi, pi), FFT-evaluated
  std::vector<Complex> eval_grid(std::size_t n) const;
};

struct StepPolyReport {
  bool ok = false;
  double max_abs = 0.0;        // max |f| over the dense grid
  double max_deviation = 0.0;  // max |f - step| outside forbidden zones
};

// Minimal-degree smoothed step meeting the StepSpec bounds on a dense
// grid. Throws with the achieved deviation when the cap is hit.
TrigPolynomial build_step_poly(const StepSpec& spec, int degree_cap = 10000);
StepPolyReport check_step_poly(const TrigPolynomial& poly, const StepSpec& spec,
                               std::size_t grid = 16384);

// Aux rotation R(theta, phi, lambda) from the synthesis convention.
Eigen::Matrix2cd aux_rotation(double theta, double phi, double lambda);

struct AngleSet {
  std::vector<double> theta;  // size L + 1
  std::vector<double> phi;    // size L + 1
  double lambda = 0.0;
  int split = 0;  // K: number of leading anticontrolled gates

  std::size_t gate_count() const { return theta.empty() ? 0 : theta.size() - 1; }
};

// Layer-stripping synthesis. The returned sequence reproduces f(tau) as
// the aux |0> amplitude when every controlled gate is replaced by its
// scalar phase; verified on a dense grid before returning.
AngleSet poly_to_angles(const TrigPolynomial& poly, double verify_tol = 1e-6);

// Scalar simulation of the gate sequence at eigenphase tau.
Complex scalar_qsp_amplitude(const AngleSet& angles, double tau);

struct QSPPlan {
  double x = 0.0;            // rotation scale of exp(i x rho)
  std::uint64_t k = 0;       // Trotter density
  int gate_count = 0;        // L
  int split = 0;             // K ~ L/2 anticontrolled prefix
  double eps = 0.0;          // sorting precision target
  double eps_gate = 0.0;     // per-gate budget, eps = N_g * eps_gate
  double delta = 0.0;        // confusion probability budget
  double poly_flatness = 0.0;  // tightened delta handed to the builder
  StepSpec step;
  AngleSet angles;
  TrigPolynomial poly;
  std::uint64_t predicted_photons = 0;
  std::uint64_t steps_per_gate = 0;

  std::string dump() const;            // key=value text
};

struct PlanRequest {
  double r_prior = 0.0;
  double eps = 0.0;
  double delta = 0.0;
  bool noisy_stage2 = false;  // stage-2 geometry for the noise filter
  double gamma = 0.0;         // used when noisy_stage2
  Eigen::Index dim = 0;       // N^2, used when noisy_stage2
  int degree_cap = 10000;
  std::uint64_t steps_margin = 4;  // extra Trotter steps per gate
  std::optional<StepSpec> step_override;
};

// Chooses x, k, step geometry and synthesizes the angle sequence.
QSPPlan make_plan(const PlanRequest& req);

enum class FilterLabel { kV1, kV2, kNoise };
const char* label_name(FilterLabel l);

struct FilterOutcome {
  FilterLabel label = FilterLabel::kV1;
  DensityOperator conditional_state;
  std::uint64_t photons = 0;
  std::vector<int> aux_record;
  bool exhausted = false;
};

struct IdealBranch {
  double probability = 0.0;
  FilterLabel label = FilterLabel::kV1;
  DensityOperator conditional_state;
};

// Spectral oracle: eigenphases mapped through the exact step. This is the
// delta -> 0, eps_g -> 0 limit the circuit is tested against.
std::vector<IdealBranch> filter_ideal(const DensityOperator& rho, const StepSpec& spec,
                                      double x);

// Deterministic part of the circuit filter: the channel output before the
// aux measurement. Cacheable across trials of an identical configuration.
struct CircuitChannel {
  double p_keep = 0.0;  // aux outcome 0 probability
  Matrix cond_keep;     // memory state given outcome 0
  Matrix cond_drop;     // memory state given outcome 1
  std::uint64_t photons = 0;
  bool exhausted = false;
};

CircuitChannel run_circuit_channel(qpca::PhotonStream& stream, const QSPPlan& plan);

// Full Fig.-3 sequence on one trial: evolve, measure aux, emit the label.
FilterOutcome filter_circuit(qpca::PhotonStream& stream, const QSPPlan& plan,
                             exp::Rng& rng);
// Same, reusing a precomputed channel (density mode is deterministic).
FilterOutcome sample_from_channel(const CircuitChannel& chan, qpca::PhotonStream& stream,
                                  const QSPPlan& plan, exp::Rng& rng);

// Trajectory-mode variant: per-step measurement of the incoming register;
// no caching is possible and trials genuinely differ.
FilterOutcome filter_circuit_trajectory(qpca::PhotonStream& stream, const QSPPlan& plan,
                                        exp::Rng& rng);

// Stage-1 + stage-2 noise filtering: stage 1 splits V1 from the rest,
// stage 2 splits V2 from the isotropic floor. Labels kV1/kV2/kNoise.
FilterOutcome two_stage_filter(qpca::PhotonStream& stream, double gamma,
                               const QSPPlan& plan1, const QSPPlan& plan2,
                               exp::Rng& rng);

struct TwoStageChannel {
  CircuitChannel stage1;
  CircuitChannel stage2;  // evolved on the stage-1 drop branch
  double p_v1 = 0.0, p_v2 = 0.0, p_noise = 0.0;
  Matrix cond_v1, cond_v2, cond_noise;
  std::uint64_t photons_stage1 = 0, photons_stage2 = 0;
};

TwoStageChannel run_two_stage_channel(qpca::PhotonStream& stream, const QSPPlan& plan1,
                                      const QSPPlan& plan2);
FilterOutcome sample_two_stage(const TwoStageChannel& chan, qpca::PhotonStream& stream,
                               exp::Rng& rng);

}  // namespace qpsim::qsp
