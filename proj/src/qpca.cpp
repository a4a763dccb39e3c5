#include "qpsim/qpca.hpp"

#include <cmath>

namespace qpsim::qpca {

namespace {

// Number of Trotter steps and the per-step angles for a target rotation x:
// full steps of 1/k with the last one shortened so the sum is exactly x.
struct StepSchedule {
  std::uint64_t n = 0;
  double full = 0.0;
  double last = 0.0;
};

StepSchedule schedule(double x, std::uint64_t k) {
  if (x < 0.0 || !std::isfinite(x)) {
    throw std::invalid_argument("approx_exp_rho: x must be finite and nonnegative");
  }
  if (k == 0) throw std::invalid_argument("approx_exp_rho: k must be >= 1");
  StepSchedule s;
  if (x == 0.0) return s;
  s.full = 1.0 / double(k);
  s.n = static_cast<std::uint64_t>(std::ceil(x * double(k) - 1e-12));
  if (s.n == 0) s.n = 1;
  s.last = x - double(s.n - 1) * s.full;
  return s;
}

}  // namespace

Matrix swap_matrix(Eigen::Index dim) {
  Matrix s = Matrix::Zero(dim * dim, dim * dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      s(i * dim + j, j * dim + i) = 1.0;
  return s;
}

Matrix exp_swap(Eigen::Index dim, double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("exp_swap: x must be finite");
  Matrix out = std::cos(x) * Matrix::Identity(dim * dim, dim * dim);
  const Complex is(0.0, std::sin(x));
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      out(i * dim + j, j * dim + i) += is;
  return out;
}

Matrix lloyd_step(const Matrix& sigma, const Matrix& rho, double x) {
  const double c = std::cos(x);
  const double s = std::sin(x);
  const Matrix rs = rho * sigma;
  const Matrix sr = sigma * rho;
  return (c * c) * sigma + (s * s) * rho - Complex(0.0, s * c) * (rs - sr);
}

DensityOperator lloyd_step(const DensityOperator& sigma, const DensityOperator& rho,
                           std::uint64_t k) {
  if (sigma.dim() != rho.dim()) {
    throw std::invalid_argument("lloyd_step: dimension mismatch");
  }
  if (k == 0) throw std::invalid_argument("lloyd_step: k must be >= 1");
  return numkit::make_density(lloyd_step(sigma.mat, rho.mat, 1.0 / double(k)));
}

ChannelResult approx_exp_rho(const DensityOperator& sigma, double x, std::uint64_t k,
                             PhotonStream& stream) {
  const StepSchedule sched = schedule(x, k);
  Matrix state = sigma.mat;
  ChannelResult out;
  for (std::uint64_t i = 0; i < sched.n; ++i) {
    const Matrix* rho = stream.draw();
    if (!rho) {
      out.exhausted = true;
      break;
    }
    const double angle = (i + 1 == sched.n) ? sched.last : sched.full;
    state = lloyd_step(state, *rho, angle);
    ++out.photons_used;
  }
  out.state = numkit::make_density(state);
  return out;
}

JointState JointState::from_aux_memory(const Eigen::Vector2cd& aux, const Matrix& memory) {
  JointState j;
  j.b00 = std::norm(aux(0)) * memory;
  j.b01 = (aux(0) * std::conj(aux(1))) * memory;
  j.b10 = (aux(1) * std::conj(aux(0))) * memory;
  j.b11 = std::norm(aux(1)) * memory;
  return j;
}

JointState JointState::from_blocks(Matrix m00, Matrix m01, Matrix m10, Matrix m11) {
  JointState j;
  j.b00 = std::move(m00);
  j.b01 = std::move(m01);
  j.b10 = std::move(m10);
  j.b11 = std::move(m11);
  return j;
}

Matrix JointState::to_matrix() const {
  const Eigen::Index d = mem_dim();
  Matrix full(2 * d, 2 * d);
  full.block(0, 0, d, d) = b00;
  full.block(0, d, d, d) = b01;
  full.block(d, 0, d, d) = b10;
  full.block(d, d, d, d) = b11;
  return full;
}

double JointState::aux_prob(int q) const {
  const double p0 = std::real(b00.trace());
  return q == 0 ? p0 : std::real(b11.trace());
}

Matrix JointState::conditional_memory(int q) const {
  const Matrix& blk = (q == 0) ? b00 : b11;
  const double p = std::real(blk.trace());
  if (p <= 0.0) throw std::runtime_error("conditional_memory: zero-probability branch");
  return blk / p;
}

void JointState::apply_aux_rotation(const Eigen::Matrix2cd& r) {
  const Matrix n00 = r(0, 0) * b00 + r(0, 1) * b10;
  const Matrix n01 = r(0, 0) * b01 + r(0, 1) * b11;
  const Matrix n10 = r(1, 0) * b00 + r(1, 1) * b10;
  const Matrix n11 = r(1, 0) * b01 + r(1, 1) * b11;
  b00 = n00 * std::conj(r(0, 0)) + n01 * std::conj(r(0, 1));
  b01 = n00 * std::conj(r(1, 0)) + n01 * std::conj(r(1, 1));
  b10 = n10 * std::conj(r(0, 0)) + n11 * std::conj(r(0, 1));
  b11 = n10 * std::conj(r(1, 0)) + n11 * std::conj(r(1, 1));
}

namespace {

// One controlled partial-SWAP step against a fresh copy, traced over the
// incoming register. Closed-form blocks; see the joint-space oracle test.
void controlled_step(JointState& j, const Matrix& rho, double angle, ControlKind kind) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const Complex ics(0.0, c * s);
  const Complex is(0.0, s);
  if (kind == ControlKind::kAntiControl) {
    const Matrix rb = rho * j.b00;
    const Matrix br = j.b00 * rho;
    j.b00 = (c * c) * j.b00 + (s * s) * std::real(j.b00.trace()) * rho + ics * (rb - br);
    j.b01 = c * j.b01 + is * (rho * j.b01);
    j.b10 = c * j.b10 - is * (j.b10 * rho);
  } else {
    const Matrix rb = rho * j.b11;
    const Matrix br = j.b11 * rho;
    j.b11 = (c * c) * j.b11 + (s * s) * std::real(j.b11.trace()) * rho - ics * (rb - br);
    j.b01 = c * j.b01 + is * (j.b01 * rho);
    j.b10 = c * j.b10 - is * (rho * j.b10);
  }
}

void controlled_step_trajectory(JointState& j, const Matrix& rho, double angle,
                                ControlKind kind, exp::Rng& rng) {
  const Eigen::Index d = j.mem_dim();
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  // diag(rho) drives the outcome distribution of the measured register;
  // build each outcome's conditional blocks, then sample.
  std::vector<JointState> branches(d);
  std::vector<double> probs(d);
  for (Eigen::Index m = 0; m < d; ++m) {
    const double rmm = std::real(rho(m, m));
    JointState bm;
    const Complex ics(0.0, c * s);
    const Complex is(0.0, s);
    const numkit::Vector rcol = rho.col(m);  // rho |m>
    if (kind == ControlKind::kAntiControl) {
      // sandwich of e^{+iS s}(A (x) rho) e^{-iS s} on outcome m
      const Matrix rPmA = rcol * j.b00.row(m);          // rho|m><m|A
      const Matrix APmr = j.b00.col(m) * rcol.adjoint();  // A|m><m|rho
      bm.b00 = (c * c) * rmm * j.b00 + ics * (rPmA - APmr) +
               (s * s) * j.b00(m, m) * rho;
      bm.b01 = c * rmm * j.b01 + is * (rcol * j.b01.row(m));
      bm.b10 = c * rmm * j.b10 - is * (j.b10.col(m) * rcol.adjoint());
      bm.b11 = rmm * j.b11;
    } else {
      const Matrix rPmA = rcol * j.b11.row(m);
      const Matrix APmr = j.b11.col(m) * rcol.adjoint();
      bm.b11 = (c * c) * rmm * j.b11 - ics * (rPmA - APmr) +
               (s * s) * j.b11(m, m) * rho;
      bm.b00 = rmm * j.b00;
      bm.b01 = c * rmm * j.b01 + is * (j.b01.col(m) * rcol.adjoint());
      bm.b10 = c * rmm * j.b10 - is * (rcol * j.b10.row(m));
    }
    probs[m] = std::max(0.0, bm.trace());
    branches[m] = std::move(bm);
  }
  const std::size_t m = rng.categorical(probs);
  const double p = probs[m];
  j = std::move(branches[m]);
  j.b00 /= p;
  j.b01 /= p;
  j.b10 /= p;
  j.b11 /= p;
}

template <typename StepFn>
ControlledResult run_controlled(const JointState& joint, double x, int sign,
                                std::uint64_t k, PhotonStream& stream, StepFn&& step) {
  if (sign != 1 && sign != -1) {
    throw std::invalid_argument("controlled_exp_rho: sign must be +1 or -1");
  }
  const ControlKind kind = (sign > 0) ? ControlKind::kAntiControl : ControlKind::kControl;
  const StepSchedule sched = schedule(x, k);
  ControlledResult out;
  out.state = joint;
  for (std::uint64_t i = 0; i < sched.n; ++i) {
    const Matrix* rho = stream.draw();
    if (!rho) {
      out.exhausted = true;
      return out;
    }
    const double angle = (i + 1 == sched.n) ? sched.last : sched.full;
    step(out.state, *rho, angle, kind);
    ++out.photons_used;
  }
  return out;
}

}  // namespace

ControlledResult controlled_exp_rho(const JointState& joint, double x, int sign,
                                    std::uint64_t k, PhotonStream& stream) {
  return run_controlled(joint, x, sign, k, stream,
                        [](JointState& j, const Matrix& rho, double angle, ControlKind kind) {
                          controlled_step(j, rho, angle, kind);
                        });
}

ControlledResult controlled_exp_rho_trajectory(const JointState& joint, double x, int sign,
                                               std::uint64_t k, PhotonStream& stream,
                                               exp::Rng& rng) {
  return run_controlled(joint, x, sign, k, stream,
                        [&rng](JointState& j, const Matrix& rho, double angle, ControlKind kind) {
                          controlled_step_trajectory(j, rho, angle, kind, rng);
                        });
}

}  // namespace qpsim::qpca
