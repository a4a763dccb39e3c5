#include "qpsim/qsp.hpp"

#include <fftw3.h>

#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <mutex>
#include <sstream>

namespace qpsim::qsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Unnormalized backward DFT: out_j = sum_k in_k exp(+2 pi i j k / n).
void fft_backward(std::vector<Complex>& data) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    plan = fftw_plan_dft_1d(int(data.size()),
                            reinterpret_cast<fftw_complex*>(data.data()),
                            reinterpret_cast<fftw_complex*>(data.data()),
                            FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard<std::mutex> lock(fftw_mutex());
  fftw_destroy_plan(plan);
}

void fft_forward(std::vector<Complex>& data) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    plan = fftw_plan_dft_1d(int(data.size()),
                            reinterpret_cast<fftw_complex*>(data.data()),
                            reinterpret_cast<fftw_complex*>(data.data()),
                            FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard<std::mutex> lock(fftw_mutex());
  fftw_destroy_plan(plan);
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * kPi); }

bool in_forbidden_zone(double tau, const StepSpec& spec) {
  // open zone, with a hair of slack so boundary-exact eigenphases
  // (r = 3/4, the stage-2 gap edges) stay classified as outside
  const double hw = spec.halfwidth * (1.0 - 1e-9);
  const double d1 = std::abs(wrap_angle(tau - spec.shift));
  const double d2 = std::abs(wrap_angle(tau - spec.shift - kPi));
  return d1 < hw || d2 < hw;
}

}  // namespace

void StepSpec::validate() const {
  if (!(shift > 0.0 && shift < kPi)) {
    throw std::invalid_argument("StepSpec: shift must lie in (0, pi)");
  }
  if (!(halfwidth > 0.0 && halfwidth < 0.5)) {
    throw std::invalid_argument("StepSpec: halfwidth must lie in (0, 1/2)");
  }
  if (!(flatness > 0.0 && flatness < 1.0)) {
    throw std::invalid_argument("StepSpec: flatness must lie in (0, 1)");
  }
  if (shift - halfwidth <= 0.0 || shift + halfwidth >= kPi) {
    throw std::invalid_argument("StepSpec: forbidden zone must lie inside (0, pi)");
  }
}

double step_function(double tau, double shift) {
  const double u = wrap_angle(tau - shift);
  if (u == 0.0 || std::abs(u) == kPi) return 0.5;
  return u > 0.0 ? 1.0 : 0.0;
}

Complex TrigPolynomial::eval(double tau) const {
  Complex acc = 0.0;
  for (int m = -degree; m <= degree; ++m) {
    acc += coeffs[std::size_t(m + degree)] * std::polar(1.0, m * tau);
  }
  return acc;
}

std::vector<Complex> TrigPolynomial::eval_grid(std::size_t n) const {
  const std::size_t m = next_pow2(std::max(n, std::size_t(2 * degree + 2)));
  std::vector<Complex> data(m, Complex(0.0));
  for (int j = -degree; j <= degree; ++j) {
    const double sign = (j & 1) ? -1.0 : 1.0;  // e^{i j (-pi)}
    const std::size_t idx = std::size_t((j % int(m) + int(m)) % int(m));
    data[idx] += sign * coeffs[std::size_t(j + degree)];
  }
  fft_backward(data);  // f(tau_j), tau_j = -pi + 2 pi j / m
  data.resize(m);
  if (m != n) {
    // caller asked for a specific count; keep the full power-of-two grid
    // when it is at least as dense
  }
  return data;
}

StepPolyReport check_step_poly(const TrigPolynomial& poly, const StepSpec& spec,
                               std::size_t grid) {
  StepPolyReport rep;
  const std::vector<Complex> vals = poly.eval_grid(grid);
  const std::size_t m = vals.size();
  for (std::size_t j = 0; j < m; ++j) {
    const double tau = -kPi + 2.0 * kPi * double(j) / double(m);
    const double a = std::abs(vals[j]);
    rep.max_abs = std::max(rep.max_abs, a);
    if (!in_forbidden_zone(tau, spec)) {
      const double dev = std::abs(vals[j] - step_function(tau, spec.shift));
      rep.max_deviation = std::max(rep.max_deviation, dev);
    }
  }
  rep.ok = rep.max_abs <= 1.0 + 1e-9 && rep.max_deviation <= spec.flatness;
  return rep;
}

namespace {

// Heat-kernel-smoothed periodic step truncated at degree L, then pulled
// toward 1/2 by exactly the measured overshoot so |f| <= 1 holds without
// spending the flatness budget on a worst-case tail bound.
TrigPolynomial smoothed_step(const StepSpec& spec, double sigma, int degree) {
  TrigPolynomial poly;
  poly.degree = degree;
  poly.coeffs.assign(std::size_t(2 * degree + 1), Complex(0.0));
  poly.coeffs[std::size_t(degree)] = 0.5;
  for (int m = 1; m <= degree; m += 2) {
    const double w = std::exp(-0.5 * double(m) * double(m) * sigma * sigma) / (kPi * double(m));
    // (2/pi) sum_odd e^{-m^2 s^2/2} sin(m (tau - shift)) / m
    poly.coeffs[std::size_t(degree + m)] = Complex(0.0, -w) * std::polar(1.0, -m * spec.shift);
    poly.coeffs[std::size_t(degree - m)] = Complex(0.0, +w) * std::polar(1.0, +m * spec.shift);
  }
  // measure the actual extremes on a dense grid (8 samples per harmonic)
  const std::size_t dense = std::max<std::size_t>(16384, 8 * std::size_t(2 * degree + 2));
  double max_abs = 0.0;
  for (const Complex& v : poly.eval_grid(dense)) max_abs = std::max(max_abs, std::abs(v));
  const double budget = 1.0 - 2e-10;  // margin under the |f| <= 1 + 1e-9 contract
  if (max_abs > budget) {
    const double squeeze = 1.0 - (budget - 0.5) / (max_abs - 0.5);
    for (auto& c : poly.coeffs) c *= (1.0 - squeeze);
    poly.coeffs[std::size_t(degree)] += 0.5 * squeeze;
  }
  return poly;
}

double step_sigma(const StepSpec& spec) {
  // transition width from the smoothing half of the deviation budget
  const double target = std::min(1.2 * spec.flatness, 1.0);
  const double q = boost::math::erfc_inv(target);
  return spec.halfwidth / (std::sqrt(2.0) * std::max(q, 0.35));
}

}  // namespace

int estimate_step_degree(const StepSpec& spec) {
  const double sigma = step_sigma(spec);
  // tail target: remaining 0.4 delta of the budget
  double t = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double val = std::exp(-t) / std::max(t, 0.5);
    if (val < 0.8 * kPi * 0.4 * spec.flatness) break;
    t *= 1.2;
  }
  return int(std::ceil(std::sqrt(2.0 * t) / sigma)) + 1;
}

TrigPolynomial build_step_poly(const StepSpec& spec, int degree_cap) {
  spec.validate();
  const double sigma = step_sigma(spec);
  int lo = 1;
  int hi = std::min(std::max(4, estimate_step_degree(spec)), degree_cap);
  TrigPolynomial best;
  StepPolyReport best_rep;
  bool found = false;
  // grow until the dense-grid contract holds, then bisect to the minimum
  for (;;) {
    TrigPolynomial cand = smoothed_step(spec, sigma, hi);
    StepPolyReport rep = check_step_poly(cand, spec);
    if (rep.ok) {
      best = std::move(cand);
      best_rep = rep;
      found = true;
      break;
    }
    if (hi >= degree_cap) {
      std::ostringstream msg;
      msg << "build_step_poly: degree cap " << degree_cap
          << " reached; achieved deviation " << rep.max_deviation
          << " vs flatness " << spec.flatness;
      throw std::runtime_error(msg.str());
    }
    lo = hi + 1;
    hi = std::min(degree_cap, hi * 2);
  }
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    TrigPolynomial cand = smoothed_step(spec, sigma, mid);
    StepPolyReport rep = check_step_poly(cand, spec);
    if (rep.ok) {
      best = std::move(cand);
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  if (!found) throw std::logic_error("build_step_poly: search invariant violated");
  return smoothed_step(spec, sigma, hi);
}

Eigen::Matrix2cd aux_rotation(double theta, double phi, double lambda) {
  Eigen::Matrix2cd r;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  r(0, 0) = std::polar(1.0, lambda + phi) * c;
  r(0, 1) = std::polar(1.0, phi) * s;
  r(1, 0) = std::polar(1.0, lambda) * s;
  r(1, 1) = -c;
  return r;
}

Complex scalar_qsp_amplitude(const AngleSet& angles, double tau) {
  const Complex z = std::polar(1.0, tau);
  const Complex zbar = std::conj(z);
  Eigen::Vector2cd v(1.0, 0.0);
  Eigen::Matrix2cd r = aux_rotation(angles.theta[0], angles.phi[0], angles.lambda);
  v = r * v;
  const std::size_t gates = angles.gate_count();
  for (std::size_t j = 1; j <= gates; ++j) {
    if (int(j) <= angles.split) {
      v(0) *= z;  // anticontrolled exp(+i x rho)
    } else {
      v(1) *= zbar;  // controlled exp(-i x rho)
    }
    v = aux_rotation(angles.theta[j], angles.phi[j], 0.0) * v;
  }
  return v(0);
}

namespace {

// Wilson iteration toward |G|^2 = R on the grid. Converges quadratically
// when the seed already shares R's unit-circle zeros (or R is bounded
// away from zero).
void wilson_polish(std::vector<Complex>& g, const std::vector<double>& r_grid,
                   int max_degree) {
  const std::size_t m = g.size();
  double rmax = 0.0;
  for (double v : r_grid) rmax = std::max(rmax, v);
  // shared regularizer keeps the ratio's fixed point at 1 across
  // unit-circle zeros of R (0/0 on grid points otherwise); it does not
  // bias the fixed point, only damps machine noise near the zeros
  const double reg = 1e-6 * std::max(rmax, 1e-30);
  std::vector<Complex> work(m);
  double best = 1e300;
  for (int iter = 0; iter < 120; ++iter) {
    for (std::size_t j = 0; j < m; ++j) {
      work[j] = (r_grid[j] + reg) / (std::norm(g[j]) + reg);
    }
    fft_forward(work);
    // analytic projection: DC and positive frequencies
    for (std::size_t k = m / 2 + 1; k < m; ++k) work[k] = 0.0;
    work[m / 2] = 0.0;
    fft_backward(work);
    double err = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      g[j] *= 0.5 * (work[j] / double(m) + 1.0);
      err = std::max(err, std::abs(std::norm(g[j]) - r_grid[j]));
    }
    // confine to the admissible degree every few rounds
    if ((iter & 7) == 7 || err < 1e-13) {
      fft_forward(g);
      for (std::size_t k = std::size_t(max_degree) + 1; k < m; ++k) g[k] = 0.0;
      fft_backward(g);
      for (auto& v : g) v /= double(m);
    }
    if (err < 1e-13) break;
    if (err > best * 4.0) break;  // diverging seed; keep the best effort
    best = std::min(best, err);
  }
}

// Fejer-Riesz factorization by companion-matrix roots; viable for small
// degrees and exact about unit-circle zeros (they split evenly).
bool root_seed(const std::vector<double>& r_grid, int max_degree,
               std::vector<Complex>& g_out) {
  const std::size_t m = r_grid.size();
  // Laurent coefficients of R from the grid
  std::vector<Complex> rc(m);
  for (std::size_t j = 0; j < m; ++j) rc[j] = r_grid[j];
  fft_forward(rc);
  for (auto& v : rc) v /= double(m);
  int deg = max_degree;
  const double scale = std::abs(rc[0]) + 1e-300;
  while (deg > 0 && std::abs(rc[std::size_t(deg)]) < 1e-13 * scale) --deg;
  if (deg == 0) {
    g_out.assign(m, Complex(std::sqrt(std::max(std::real(rc[0]), 0.0))));
    return true;
  }
  // polynomial p(w) = w^deg R(w) of degree 2*deg
  const int n = 2 * deg;
  Eigen::VectorXcd poly(n + 1);
  for (int k = -deg; k <= deg; ++k) {
    const std::size_t idx = k >= 0 ? std::size_t(k) : m - std::size_t(-k);
    poly(k + deg) = rc[idx];
  }
  if (std::abs(poly(n)) < 1e-300) return false;
  Eigen::MatrixXcd companion = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) companion(i, n - 1) = -poly(i) / poly(n);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(companion);
  if (es.info() != Eigen::Success) return false;
  std::vector<Complex> roots(std::size_t(n), Complex(0.0));
  for (int i = 0; i < n; ++i) roots[std::size_t(i)] = es.eigenvalues()(i);
  // min-phase half: roots inside the disk, plus half of every
  // unit-circle cluster (those come in even multiplicities)
  const double btol = 1e-5;
  std::vector<Complex> inside, boundary;
  for (const Complex& w : roots) {
    const double aw = std::abs(w);
    if (aw <= 1.0 - btol) {
      inside.push_back(w);
    } else if (aw < 1.0 + btol) {
      boundary.push_back(w);
    }
  }
  std::vector<Complex> chosen = inside;
  std::vector<bool> used(boundary.size(), false);
  for (std::size_t i = 0; i < boundary.size(); ++i) {
    if (used[i]) continue;
    std::vector<std::size_t> cluster{i};
    used[i] = true;
    for (std::size_t j = i + 1; j < boundary.size(); ++j) {
      if (!used[j] && std::abs(boundary[j] - boundary[i]) < 1e-3) {
        cluster.push_back(j);
        used[j] = true;
      }
    }
    Complex mean = 0.0;
    for (std::size_t idx : cluster) mean += boundary[idx];
    mean /= double(cluster.size());
    // snap to the circle, then Newton-refine the zero of R(theta): the
    // eigensolver only locates double roots to sqrt(eps)
    double theta = std::arg(mean);
    auto r_deriv = [&](double th, int order) {
      Complex acc = 0.0;
      for (int k = -deg; k <= deg; ++k) {
        const std::size_t idx = k >= 0 ? std::size_t(k) : m - std::size_t(-k);
        Complex term = rc[idx] * std::polar(1.0, k * th);
        for (int o = 0; o < order; ++o) term *= Complex(0.0, double(k));
        acc += term;
      }
      return std::real(acc);
    };
    for (int it = 0; it < 8; ++it) {
      const double d1 = r_deriv(theta, 1);
      const double d2 = r_deriv(theta, 2);
      if (std::abs(d2) < 1e-30) break;
      const double step = d1 / d2;
      if (std::abs(step) > 1e-2) break;
      theta -= step;
      if (std::abs(step) < 1e-15) break;
    }
    const Complex snapped = std::polar(1.0, theta);
    for (std::size_t k = 0; k < cluster.size() / 2; ++k) chosen.push_back(snapped);
  }
  if (int(chosen.size()) != deg) return false;
  std::vector<Complex> coeff(std::size_t(deg) + 1, Complex(0.0));
  coeff[0] = 1.0;
  for (int r = 0; r < deg; ++r) {
    for (int k = r + 1; k >= 1; --k) {
      coeff[std::size_t(k)] = coeff[std::size_t(k - 1)] - chosen[std::size_t(r)] * coeff[std::size_t(k)];
    }
    coeff[0] = -chosen[std::size_t(r)] * coeff[0];
  }
  std::vector<Complex> g(m, Complex(0.0));
  for (int k = 0; k <= deg; ++k) g[std::size_t(k)] = coeff[std::size_t(k)];
  fft_backward(g);
  // normalize |G|^2 to R at the grid maximum of R
  std::size_t jmax = 0;
  for (std::size_t j = 1; j < m; ++j) {
    if (r_grid[j] > r_grid[jmax]) jmax = j;
  }
  const double gj = std::norm(g[jmax]);
  if (gj <= 0.0) return false;
  const double s = std::sqrt(r_grid[jmax] / gj);
  for (auto& v : g) v *= s;
  g_out = std::move(g);
  return true;
}

// Spectral factor of a nonnegative grid function; returns the Fourier
// coefficients 0..max_degree of the analytic factor.
std::vector<Complex> spectral_factor(const std::vector<double>& r_grid, int max_degree) {
  const std::size_t m = r_grid.size();
  std::vector<Complex> g;
  bool seeded = false;
  if (max_degree <= 128) {
    seeded = root_seed(r_grid, max_degree, g);
  }
  if (!seeded) {
    double mean = 0.0;
    for (double v : r_grid) mean += v;
    mean /= double(m);
    g.assign(m, Complex(std::sqrt(std::max(mean, 1e-30))));
  }
  wilson_polish(g, r_grid, max_degree);
  fft_forward(g);
  std::vector<Complex> coeffs(std::size_t(max_degree + 1));
  // rotate the global phase so the leading coefficient is real positive
  Complex lead = g[0] / double(m);
  const Complex phase = std::abs(lead) > 0 ? std::conj(lead) / std::abs(lead) : Complex(1.0);
  for (int k = 0; k <= max_degree; ++k) coeffs[std::size_t(k)] = phase * g[std::size_t(k)] / double(m);
  return coeffs;
}

}  // namespace

AngleSet poly_to_angles(const TrigPolynomial& poly, double verify_tol) {
  const int d = poly.degree;
  const int gates = 2 * d;
  // f~(w) = sum_k a_k w^k with a_k = c_{d-k}; the circuit contributes the
  // z^K prefactor that maps it back to the Laurent polynomial f.
  std::vector<Complex> a(std::size_t(gates + 1));
  for (int k = 0; k <= gates; ++k) a[std::size_t(k)] = poly.coeffs[std::size_t(2 * d - k)];

  const std::size_t m = next_pow2(std::max<std::size_t>(4096, 16 * std::size_t(gates + 1)));
  std::vector<Complex> fvals(m, Complex(0.0));
  for (int k = 0; k <= gates; ++k) fvals[std::size_t(k)] = a[std::size_t(k)];
  fft_backward(fvals);
  std::vector<double> r_grid(m);
  double worst = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double r = 1.0 - std::norm(fvals[j]);
    worst = std::min(worst, r);
    r_grid[j] = std::max(r, 0.0);
  }
  if (worst < -1e-9) {
    std::ostringstream msg;
    msg << "poly_to_angles: |f| exceeds 1 by " << std::sqrt(-worst) << "; no completion exists";
    throw std::runtime_error(msg.str());
  }
  std::vector<Complex> b = spectral_factor(r_grid, gates);

  AngleSet out;
  out.split = d;
  out.theta.assign(std::size_t(gates + 1), 0.0);
  out.phi.assign(std::size_t(gates + 1), 0.0);

  std::vector<Complex> f(a), g(b);
  for (int j = gates; j >= 1; --j) {
    const Complex f0 = f[0], g0 = g[0];
    const double theta = std::atan2(std::abs(g0), std::abs(f0));
    const double phi = (std::abs(g0) > 1e-300 && std::abs(f0) > 1e-300)
                           ? std::arg(f0) - std::arg(g0)
                           : 0.0;
    out.theta[std::size_t(j)] = theta;
    out.phi[std::size_t(j)] = phi;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const Complex em = std::polar(1.0, -phi);
    // apply R^dag then shift the lower branch down one power of w
    for (int k = 0; k < j; ++k) {
      const Complex fk = f[std::size_t(k)];
      const Complex gk = g[std::size_t(k)];
      const Complex fk1 = f[std::size_t(k + 1)];
      const Complex gk1 = g[std::size_t(k + 1)];
      f[std::size_t(k)] = em * c * fk + s * gk;
      g[std::size_t(k)] = em * s * fk1 - c * gk1;
    }
    f.resize(std::size_t(j));
    g.resize(std::size_t(j));
    if ((j & 63) == 0) {
      double norm2 = 0.0;
      for (const auto& v : f) norm2 += std::norm(v);
      for (const auto& v : g) norm2 += std::norm(v);
      const double scale = 1.0 / std::sqrt(std::max(norm2, 1e-30));
      for (auto& v : f) v *= scale;
      for (auto& v : g) v *= scale;
    }
  }
  const Complex p = f[0], q = g[0];
  out.theta[0] = std::atan2(std::abs(q), std::abs(p));
  out.lambda = std::abs(q) > 1e-14 ? std::arg(q) : 0.0;
  out.phi[0] = (std::abs(p) > 1e-14 ? std::arg(p) : 0.0) - out.lambda;

  // mandatory scalar verification against the stored polynomial
  double residual = 0.0;
  const int grid = 512;
  for (int i = 0; i < grid; ++i) {
    const double tau = -kPi + 2.0 * kPi * double(i) / double(grid);
    residual = std::max(residual,
                        std::abs(scalar_qsp_amplitude(out, tau) - poly.eval(tau)));
  }
  if (residual > verify_tol) {
    std::ostringstream msg;
    msg << "poly_to_angles: scalar verification residual " << residual
        << " exceeds " << verify_tol;
    throw std::runtime_error(msg.str());
  }
  return out;
}

namespace {

struct Geometry {
  double shift_rel = 0.0;      // s / x
  double halfwidth_rel = 0.0;  // Delta / x
};

Geometry plan_geometry(const PlanRequest& req) {
  Geometry geo;
  if (!req.noisy_stage2) {
    // eigenphase images sit at x*r and x*(1-r); midpoint placement with a
    // quarter-width zone keeps both clear for every r >= 3/4
    geo.shift_rel = 0.5;
    geo.halfwidth_rel = 0.25;
  } else {
    const double d = double(req.dim);
    const double p2 = (1.0 - req.gamma) * (1.0 - req.r_prior) + req.gamma / d;
    const double pres = req.gamma / d;
    const double gap = p2 - pres;
    if (gap <= 0.0) {
      throw std::invalid_argument("make_plan: stage-2 spectral gap vanished");
    }
    // zone sits close above the noise floor so the V2 image keeps a
    // multiple of the transition width in clearance
    geo.halfwidth_rel = 0.4 * gap;
    geo.shift_rel = pres + 0.05 * gap + geo.halfwidth_rel;
  }
  return geo;
}

}  // namespace

QSPPlan make_plan(const PlanRequest& req) {
  if (!(req.eps > 0.0 && req.eps < 1.0) || !(req.delta > 0.0 && req.delta < 1.0)) {
    throw std::invalid_argument("make_plan: eps and delta must lie in (0, 1)");
  }
  if (std::abs(req.r_prior - 0.5) < 0.05) {
    throw std::invalid_argument("make_plan: r ~ 1/2 unsupported");
  }
  if (!req.noisy_stage2 && !req.step_override && req.r_prior < 0.75) {
    const double max_rel = req.r_prior - 0.5;
    std::ostringstream msg;
    msg << "make_plan: r_prior below the 3/4 regime; maximum achievable "
        << "halfwidth is " << max_rel << " * x (requested x/4)";
    throw std::invalid_argument(msg.str());
  }

  QSPPlan plan;
  plan.eps = req.eps;
  plan.delta = req.delta;
  plan.poly_flatness = req.delta / 4.0;

  const Geometry geo = plan_geometry(req);
  const double c_budget = 2.0;  // c_L seed for the gate-count budget
  double x = req.eps * geo.halfwidth_rel / (2.0 * c_budget * std::log(1.0 / plan.poly_flatness));

  // respect the degree cap: larger x means fewer, longer gates at the
  // same photon budget
  {
    StepSpec probe{geo.shift_rel * x, geo.halfwidth_rel * x, plan.poly_flatness};
    const int est = estimate_step_degree(probe);
    const int limit = std::max(16, int(0.8 * double(req.degree_cap)));
    if (est > limit) {
      x *= double(est) / double(limit);
    }
  }

  StepSpec spec;
  if (req.step_override) {
    spec = *req.step_override;
    x = req.step_override->shift / geo.shift_rel;
  } else {
    spec.shift = geo.shift_rel * x;
    spec.halfwidth = geo.halfwidth_rel * x;
    spec.flatness = plan.poly_flatness;
  }
  plan.step = spec;
  plan.x = x;
  plan.poly = build_step_poly(spec, req.degree_cap);
  plan.angles = poly_to_angles(plan.poly);
  plan.gate_count = int(plan.angles.gate_count());
  plan.split = plan.angles.split;

  plan.eps_gate = req.eps / double(plan.gate_count);  // eps = N_g * eps_g
  const double margin = double(req.steps_margin);
  plan.k = std::uint64_t(std::ceil(margin * plan.x / plan.eps_gate));
  plan.k = std::max<std::uint64_t>(plan.k, 1);
  plan.steps_per_gate = std::uint64_t(std::ceil(plan.x * double(plan.k) - 1e-12));
  plan.steps_per_gate = std::max<std::uint64_t>(plan.steps_per_gate, 1);
  plan.predicted_photons = 1 + std::uint64_t(plan.gate_count) * plan.steps_per_gate;
  return plan;
}

const char* label_name(FilterLabel l) {
  switch (l) {
    case FilterLabel::kV1: return "V1";
    case FilterLabel::kV2: return "V2";
    case FilterLabel::kNoise: return "noise";
  }
  return "?";
}

std::vector<IdealBranch> filter_ideal(const DensityOperator& rho, const StepSpec& spec,
                                      double x) {
  spec.validate();
  const numkit::EighResult e = numkit::eigh(rho.mat);
  const Eigen::Index n = e.values.size();
  Matrix keep = Matrix::Zero(n, n);
  Matrix drop = Matrix::Zero(n, n);
  double p_keep = 0.0, p_drop = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = e.values(i);
    if (w <= 1e-12) continue;
    const double tau = x * w;
    if (in_forbidden_zone(tau, spec)) {
      std::ostringstream msg;
      msg << "filter_ideal: eigenphase " << tau << " (weight " << w
          << ") lies in the forbidden zone; unsortable at this x";
      throw std::runtime_error(msg.str());
    }
    const Matrix proj = e.vectors.col(i) * e.vectors.col(i).adjoint();
    if (step_function(tau, spec.shift) > 0.5) {
      keep += w * proj;
      p_keep += w;
    } else {
      drop += w * proj;
      p_drop += w;
    }
  }
  std::vector<IdealBranch> out;
  if (p_keep > 0.0) {
    out.push_back({p_keep, FilterLabel::kV1, numkit::make_density(keep / p_keep)});
  }
  if (p_drop > 0.0) {
    out.push_back({p_drop, FilterLabel::kV2, numkit::make_density(drop / p_drop)});
  }
  return out;
}

namespace {

CircuitChannel run_channel_impl(qpca::PhotonStream& stream, const QSPPlan& plan,
                                const Matrix* initial_memory, exp::Rng* traj_rng) {
  CircuitChannel chan;
  const std::uint64_t start = stream.consumed;
  Matrix memory;
  if (initial_memory) {
    memory = *initial_memory;
  } else {
    const Matrix* first = stream.draw();
    if (!first) {
      chan.exhausted = true;
      return chan;
    }
    memory = *first;
  }
  qpca::JointState joint =
      qpca::JointState::from_aux_memory(Eigen::Vector2cd(1.0, 0.0), memory);
  joint.apply_aux_rotation(aux_rotation(plan.angles.theta[0], plan.angles.phi[0],
                                        plan.angles.lambda));
  const int gates = plan.gate_count;
  for (int j = 1; j <= gates; ++j) {
    const int sign = (j <= plan.split) ? +1 : -1;
    qpca::ControlledResult res =
        traj_rng ? qpca::controlled_exp_rho_trajectory(joint, plan.x, sign, plan.k, stream,
                                                       *traj_rng)
                 : qpca::controlled_exp_rho(joint, plan.x, sign, plan.k, stream);
    if (res.exhausted) {
      chan.exhausted = true;
      chan.photons = stream.consumed - start;
      return chan;
    }
    joint = std::move(res.state);
    joint.apply_aux_rotation(
        aux_rotation(plan.angles.theta[std::size_t(j)], plan.angles.phi[std::size_t(j)], 0.0));
  }
  chan.p_keep = joint.aux_prob(0);
  const double p_drop = joint.aux_prob(1);
  chan.cond_keep = chan.p_keep > 1e-15 ? joint.conditional_memory(0)
                                       : Matrix::Zero(memory.rows(), memory.cols());
  chan.cond_drop = p_drop > 1e-15 ? joint.conditional_memory(1)
                                  : Matrix::Zero(memory.rows(), memory.cols());
  chan.photons = stream.consumed - start;
  return chan;
}

FilterOutcome outcome_from(const CircuitChannel& chan, exp::Rng& rng) {
  FilterOutcome out;
  out.photons = chan.photons;
  if (chan.exhausted) {
    out.exhausted = true;
    return out;
  }
  const int aux = rng.bernoulli(chan.p_keep) ? 0 : 1;
  out.aux_record.push_back(aux);
  out.label = aux == 0 ? FilterLabel::kV1 : FilterLabel::kV2;
  out.conditional_state =
      numkit::make_density(aux == 0 ? chan.cond_keep : chan.cond_drop);
  return out;
}

}  // namespace

CircuitChannel run_circuit_channel(qpca::PhotonStream& stream, const QSPPlan& plan) {
  return run_channel_impl(stream, plan, nullptr, nullptr);
}

FilterOutcome filter_circuit(qpca::PhotonStream& stream, const QSPPlan& plan,
                             exp::Rng& rng) {
  return outcome_from(run_circuit_channel(stream, plan), rng);
}

FilterOutcome sample_from_channel(const CircuitChannel& chan, qpca::PhotonStream& stream,
                                  const QSPPlan& plan, exp::Rng& rng) {
  (void)plan;
  if (!chan.exhausted && stream.budget - stream.consumed < chan.photons) {
    FilterOutcome out;
    out.exhausted = true;
    out.photons = stream.budget - stream.consumed;
    stream.consumed = stream.budget;
    return out;
  }
  stream.consumed += chan.photons;
  return outcome_from(chan, rng);
}

FilterOutcome filter_circuit_trajectory(qpca::PhotonStream& stream, const QSPPlan& plan,
                                        exp::Rng& rng) {
  return outcome_from(run_channel_impl(stream, plan, nullptr, &rng), rng);
}

TwoStageChannel run_two_stage_channel(qpca::PhotonStream& stream, const QSPPlan& plan1,
                                      const QSPPlan& plan2) {
  TwoStageChannel chan;
  chan.stage1 = run_circuit_channel(stream, plan1);
  if (chan.stage1.exhausted) return chan;
  chan.photons_stage1 = chan.stage1.photons;
  chan.stage2 = run_channel_impl(stream, plan2, &chan.stage1.cond_drop, nullptr);
  chan.photons_stage2 = chan.stage2.photons;
  if (chan.stage2.exhausted) return chan;
  chan.p_v1 = chan.stage1.p_keep;
  chan.p_v2 = (1.0 - chan.stage1.p_keep) * chan.stage2.p_keep;
  chan.p_noise = (1.0 - chan.stage1.p_keep) * (1.0 - chan.stage2.p_keep);
  chan.cond_v1 = chan.stage1.cond_keep;
  chan.cond_v2 = chan.stage2.cond_keep;
  chan.cond_noise = chan.stage2.cond_drop;
  return chan;
}

FilterOutcome sample_two_stage(const TwoStageChannel& chan, qpca::PhotonStream& stream,
                               exp::Rng& rng) {
  FilterOutcome out;
  if (chan.stage1.exhausted || chan.stage2.exhausted) {
    out.exhausted = true;
    return out;
  }
  stream.consumed += chan.photons_stage1;
  out.photons = chan.photons_stage1;
  const int aux1 = rng.bernoulli(chan.stage1.p_keep) ? 0 : 1;
  out.aux_record.push_back(aux1);
  if (aux1 == 0) {
    out.label = FilterLabel::kV1;
    out.conditional_state = numkit::make_density(chan.cond_v1);
    return out;
  }
  stream.consumed += chan.photons_stage2;
  out.photons += chan.photons_stage2;
  const int aux2 = rng.bernoulli(chan.stage2.p_keep) ? 0 : 1;
  out.aux_record.push_back(aux2);
  out.label = aux2 == 0 ? FilterLabel::kV2 : FilterLabel::kNoise;
  out.conditional_state =
      numkit::make_density(aux2 == 0 ? chan.cond_v2 : chan.cond_noise);
  return out;
}

FilterOutcome two_stage_filter(qpca::PhotonStream& stream, double gamma,
                               const QSPPlan& plan1, const QSPPlan& plan2,
                               exp::Rng& rng) {
  (void)gamma;
  const std::uint64_t start = stream.consumed;
  CircuitChannel stage1 = run_circuit_channel(stream, plan1);
  FilterOutcome out;
  if (stage1.exhausted) {
    out.exhausted = true;
    out.photons = stream.consumed - start;
    return out;
  }
  const int aux1 = rng.bernoulli(stage1.p_keep) ? 0 : 1;
  out.aux_record.push_back(aux1);
  if (aux1 == 0) {
    out.label = FilterLabel::kV1;
    out.conditional_state = numkit::make_density(stage1.cond_keep);
    out.photons = stream.consumed - start;
    return out;
  }
  CircuitChannel stage2 = run_channel_impl(stream, plan2, &stage1.cond_drop, nullptr);
  if (stage2.exhausted) {
    out.exhausted = true;
    out.photons = stream.consumed - start;
    return out;
  }
  const int aux2 = rng.bernoulli(stage2.p_keep) ? 0 : 1;
  out.aux_record.push_back(aux2);
  out.label = aux2 == 0 ? FilterLabel::kV2 : FilterLabel::kNoise;
  out.conditional_state =
      numkit::make_density(aux2 == 0 ? stage2.cond_keep : stage2.cond_drop);
  out.photons = stream.consumed - start;
  return out;
}

std::string QSPPlan::dump() const {
  std::ostringstream out;
  out << "x=" << exp::format_double(x) << "\n";
  out << "k=" << k << "\n";
  out << "gate_count=" << gate_count << "\n";
  out << "split=" << split << "\n";
  out << "eps=" << exp::format_double(eps) << "\n";
  out << "eps_gate=" << exp::format_double(eps_gate) << "\n";
  out << "delta=" << exp::format_double(delta) << "\n";
  out << "poly_flatness=" << exp::format_double(poly_flatness) << "\n";
  out << "step_shift=" << exp::format_double(step.shift) << "\n";
  out << "step_halfwidth=" << exp::format_double(step.halfwidth) << "\n";
  out << "poly_degree=" << poly.degree << "\n";
  out << "steps_per_gate=" << steps_per_gate << "\n";
  out << "predicted_photons=" << predicted_photons << "\n";
  return out.str();
}

}  // namespace qpsim::qsp
