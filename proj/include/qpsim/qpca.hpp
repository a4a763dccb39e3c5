#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "qpsim/experiment.hpp"
#include "qpsim/numkit.hpp"

// Density-matrix exponentiation: the partial-SWAP channel that turns fresh
// photon copies of rho into an approximation of exp(-i x rho), plus its
// aux-qubit-controlled variant consumed by the QSP filter. Every channel
// draws its copies through a PhotonStream so the photon ledger is exact.

namespace qpsim::qpca {

using numkit::Complex;
using numkit::DensityOperator;
using numkit::Matrix;

// SWAP on a d x d bipartite space: S (u (x) v) = v (x) u.
Matrix swap_matrix(Eigen::Index dim);

// exp(i S x) = cos(x) I + i sin(x) S, exact since S^2 = I.
Matrix exp_swap(Eigen::Index dim, double x);

// Source of fresh photon copies. In density mode every draw returns the
// same operator; `consumed` is the audited ledger. A finite budget makes
// exhaustion a reportable outcome instead of a crash.
struct PhotonStream {
  const Matrix* source = nullptr;
  std::uint64_t consumed = 0;
  std::uint64_t budget = UINT64_MAX;
  std::uint64_t seed = 0;

  explicit PhotonStream(const Matrix& rho, std::uint64_t seed_ = 0,
                        std::uint64_t budget_ = UINT64_MAX)
      : source(&rho), budget(budget_), seed(seed_) {}

  bool exhausted() const { return consumed >= budget; }
  // nullptr on exhaustion.
  const Matrix* draw() {
    if (exhausted()) return nullptr;
    ++consumed;
    return source;
  }
};

// One Trotter step: Tr_1[ exp(-i S x) (rho (x) sigma) exp(i S x) ] with
// x = 1/k. Evaluated in closed form,
//   cos^2(x) sigma + sin^2(x) rho - i sin(x)cos(x) [rho, sigma],
// which the joint-space construction reproduces (see tests).
Matrix lloyd_step(const Matrix& sigma, const Matrix& rho, double x);
DensityOperator lloyd_step(const DensityOperator& sigma, const DensityOperator& rho,
                           std::uint64_t k);

struct ChannelResult {
  DensityOperator state;
  std::uint64_t photons_used = 0;
  bool exhausted = false;  // stream ran dry; state holds the partial result
};

// ceil(x k) steps, final step shortened so the angles sum to x exactly;
// approximates exp(-i x rho) sigma exp(i x rho) with error O(x / k^2).
ChannelResult approx_exp_rho(const DensityOperator& sigma, double x, std::uint64_t k,
                             PhotonStream& stream);

// aux (x) memory state kept as d x d blocks; b10 is implicit (= b01^dag)
// everywhere we evolve, but stored for generality.
struct JointState {
  Matrix b00, b01, b10, b11;

  Eigen::Index mem_dim() const { return b00.rows(); }
  static JointState from_aux_memory(const Eigen::Vector2cd& aux, const Matrix& memory);
  static JointState from_blocks(Matrix m00, Matrix m01, Matrix m10, Matrix m11);
  Matrix to_matrix() const;  // full 2d x 2d assembly, for tests
  double trace() const { return std::real(b00.trace() + b11.trace()); }

  // probability of aux outcome q and the conditional memory state
  double aux_prob(int q) const;
  Matrix conditional_memory(int q) const;

  void apply_aux_rotation(const Eigen::Matrix2cd& r);
};

enum class ControlKind {
  kAntiControl,  // applies the exponential when aux is |0>
  kControl       // applies the exponential when aux is |1>
};

// Controlled approx exp(sign * i x rho) built from per-step controlled
// partial SWAPs on fresh copies; photon accounting as approx_exp_rho.
// With sign=+1 the convention is anticontrol, with sign=-1 control.
struct ControlledResult {
  JointState state;
  std::uint64_t photons_used = 0;
  bool exhausted = false;
};

ControlledResult controlled_exp_rho(const JointState& joint, double x, int sign,
                                    std::uint64_t k, PhotonStream& stream);

// Trajectory variant: after each step the incoming register is measured in
// the computational basis and the joint state conditions on the outcome.
ControlledResult controlled_exp_rho_trajectory(const JointState& joint, double x, int sign,
                                               std::uint64_t k, PhotonStream& stream,
                                               exp::Rng& rng);

}  // namespace qpsim::qpca
