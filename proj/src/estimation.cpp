#include "qpsim/estimation.hpp"

#include <cmath>
#include <sstream>

#include "qpsim/qpca.hpp"

namespace qpsim::est {

namespace {

// top eigenvector of a (nearly pure) sampled branch state
Vector dominant_vector(const Matrix& state) {
  const numkit::EighResult e = numkit::eigh(state);
  return e.vectors.col(e.values.size() - 1);
}

}  // namespace

std::string EigenModel::dump() const {
  std::ostringstream out;
  out << "r=" << exp::format_double(r) << "\n";
  out << "b=" << exp::format_double(b) << "\n";
  out << "h=" << exp::format_double(h) << "\n";
  out << "a=" << exp::format_double(a) << "\n";
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k)
      out << "c_tilde_" << j + 1 << k + 1 << "=" << exp::format_double(c_tilde[j][k]) << "\n";
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k)
      out << "c_" << j + 1 << k + 1 << "=" << exp::format_double(c[j][k]) << "\n";
  out << "norm_1=" << exp::format_double(norm[0]) << "\n";
  out << "norm_2=" << exp::format_double(norm[1]) << "\n";
  return out.str();
}

std::string OverlapSet::dump() const {
  std::ostringstream out;
  out << "v11=" << exp::format_double(v11) << "\n";
  out << "v22=" << exp::format_double(v22) << "\n";
  out << "v12_re=" << exp::format_double(v12.real()) << "\n";
  out << "v12_im=" << exp::format_double(v12.imag()) << "\n";
  out << "source=" << source << "\n";
  return out.str();
}

EigenModel solve_model(double r, double b) {
  if (!(b >= 0.0 && b < 1.0)) {
    throw std::invalid_argument("solve_model: b must lie in [0, 1); b = 1 is excluded");
  }
  if (!(r > 0.5 && r <= 1.0)) {
    throw std::invalid_argument("solve_model: r must lie in (1/2, 1] (swap labels first)");
  }
  const double bv = b * (1.0 - b);
  if (bv <= 0.0) {
    throw std::invalid_argument("solve_model: degenerate b (0 or 1) carries no second source");
  }
  const double det = r * (1.0 - r);
  double h2 = 1.0 - det / bv;  // determinant relation
  if (h2 < -1e-9 || h2 >= 1.0) {
    std::ostringstream msg;
    msg << "solve_model: inconsistent (r, b): h^2 = " << h2 << " outside [0, 1)";
    throw std::invalid_argument(msg.str());
  }
  h2 = std::max(h2, 0.0);

  EigenModel m;
  m.r = r;
  m.b = b;
  m.h = std::sqrt(h2);
  m.a = 1.0 - h2;

  if (m.h < 1e-9) {
    // orthogonal-source limit: the eigenvector formula degenerates to 0/0
    // for the light branch, but the answer is V_k = psi_k up to ordering
    const bool star_heavier = b >= 0.5;
    m.c_tilde[0][0] = star_heavier ? 1.0 : 0.0;
    m.c_tilde[1][0] = star_heavier ? 0.0 : 1.0;
    m.c_tilde[0][1] = star_heavier ? 0.0 : 1.0;
    m.c_tilde[1][1] = star_heavier ? 1.0 : 0.0;
    m.norm[0] = m.norm[1] = 1.0;
  } else {
    const double rk[2] = {r, 1.0 - r};
    for (int k = 0; k < 2; ++k) {
      const double t1 = rk[k] + m.a * (b - 1.0);
      const double t2 = m.a * h2 * (b - 1.0) * (b - 1.0);
      const double nk = 1.0 / std::sqrt(t1 * t1 + t2);
      m.norm[k] = nk;
      m.c_tilde[0][k] = nk * (rk[k] - (1.0 - b));
      m.c_tilde[1][k] = nk * m.h * (1.0 - b);
    }
  }
  // invert the 2x2 coefficient matrix: psi_j over the eigenbasis
  const double det_c = m.c_tilde[0][0] * m.c_tilde[1][1] - m.c_tilde[0][1] * m.c_tilde[1][0];
  if (std::abs(det_c) < 1e-14) {
    throw std::runtime_error("solve_model: coefficient matrix singular");
  }
  m.c[0][0] = m.c_tilde[1][1] / det_c;
  m.c[0][1] = -m.c_tilde[0][1] / det_c;
  m.c[1][0] = -m.c_tilde[1][0] / det_c;
  m.c[1][1] = m.c_tilde[0][0] / det_c;

  // audit: the 2x2 representation must reproduce the spectrum {1-r, r}
  const double sa = std::sqrt(m.a);
  Eigen::Matrix2d rho2;
  rho2 << b + (1.0 - b) * h2, m.h * sa * (1.0 - b),
          m.h * sa * (1.0 - b), (1.0 - b) * m.a;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(rho2);
  if (std::abs(es.eigenvalues()(1) - r) > 1e-10 ||
      std::abs(es.eigenvalues()(0) - (1.0 - r)) > 1e-10) {
    throw std::runtime_error("solve_model: spectrum audit failed");
  }
  return m;
}

Observable::Observable(std::string name_, const Matrix& raw) : name(std::move(name_)) {
  if (!numkit::is_hermitian(raw, 1e-10)) {
    throw std::invalid_argument("Observable: matrix must be Hermitian");
  }
  const numkit::EighResult e = numkit::eigh(raw);
  const double top = std::max(std::abs(e.values.minCoeff()), std::abs(e.values.maxCoeff()));
  if (top > 1.0) {
    scale = top;
    matrix = raw / top;
  } else {
    scale = 1.0;
    matrix = raw;
  }
}

REstimate estimate_r(const std::vector<bool>& labels) {
  if (labels.size() < 2) {
    throw std::invalid_argument("estimate_r: need at least two labels");
  }
  std::size_t ones = 0;
  for (bool v : labels) ones += v ? 1 : 0;
  REstimate out;
  out.count = labels.size();
  double f = double(ones) / double(labels.size());
  if (f < 0.5) {
    f = 1.0 - f;
    out.swapped = true;
  }
  out.r_hat = f;
  out.stderr = std::sqrt(std::max(f * (1.0 - f), 0.0) / double(labels.size()));
  return out;
}

double reconstruct_observable(const EigenModel& model, const OverlapSet& overlaps,
                              int which) {
  if (which != 1 && which != 2) {
    throw std::invalid_argument("reconstruct_observable: which must be 1 or 2");
  }
  const int k = which - 1;
  const double c1 = model.c[0][k];
  const double c2 = model.c[1][k];
  return c1 * c1 * overlaps.v11 + c2 * c2 * overlaps.v22 +
         2.0 * c1 * c2 * overlaps.v12.real();
}

SwapTestResult swap_test(const Matrix& a, const Matrix& b, Complex omega,
                         std::uint64_t shots, exp::Rng& rng) {
  if (a.rows() != b.rows()) throw std::invalid_argument("swap_test: dimension mismatch");
  if (std::abs(std::abs(omega) - 1.0) > 1e-12) {
    throw std::invalid_argument("swap_test: omega must be unimodular");
  }
  const Eigen::Index d = a.rows();
  const Matrix joint = numkit::kron(a, b);
  const Matrix s = qpca::swap_matrix(d);
  const Matrix eye = Matrix::Identity(d * d, d * d);
  const Matrix m0 = 0.5 * (eye + omega * s);
  const Matrix m1 = 0.5 * (eye - omega * s);
  Matrix b0 = m0 * joint * m0.adjoint();
  Matrix b1 = m1 * joint * m1.adjoint();
  SwapTestResult out;
  out.p0 = std::real(b0.trace());
  const double p1 = std::real(b1.trace());
  out.branch0 = out.p0 > 1e-15 ? numkit::make_density(b0 / out.p0)
                               : numkit::DensityOperator{Matrix::Zero(d * d, d * d)};
  out.branch1 = p1 > 1e-15 ? numkit::make_density(b1 / p1)
                           : numkit::DensityOperator{Matrix::Zero(d * d, d * d)};
  out.shots = shots;
  if (shots == 0) {
    out.p0_hat = out.p0;
  } else {
    std::uint64_t zeros = 0;
    for (std::uint64_t i = 0; i < shots; ++i) zeros += rng.bernoulli(out.p0) ? 1 : 0;
    out.p0_hat = double(zeros) / double(shots);
  }
  return out;
}

MeasuredValue measure_expectation(const Matrix& obs, const Matrix& state,
                                  std::uint64_t shots, Mode mode, exp::Rng& rng) {
  MeasuredValue out;
  const double exact = std::real((obs * state).trace());
  if (mode == Mode::kAnalytic || shots == 0) {
    out.value = exact;
    out.stderr = 0.0;
    return out;
  }
  const numkit::EighResult e = numkit::eigh(obs);
  const Eigen::Index n = e.values.size();
  std::vector<double> probs(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    probs[std::size_t(i)] =
        std::max(0.0, std::real(e.vectors.col(i).dot(state * e.vectors.col(i))));
  }
  double sum = 0.0, sumsq = 0.0;
  for (std::uint64_t sshot = 0; sshot < shots; ++sshot) {
    const double v = e.values(Eigen::Index(rng.categorical(probs)));
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / double(shots);
  out.value = mean;
  out.stderr = std::sqrt(std::max(sumsq / double(shots) - mean * mean, 0.0) /
                         double(shots));
  out.shots = shots;
  return out;
}

BlockEncodeResult block_encode_offdiag(const Matrix& v1_state, const Matrix& rho,
                                       const Observable& o_ref, const SignPrior& prior,
                                       std::uint64_t shots, Mode mode, exp::Rng& rng) {
  BlockEncodeResult out;
  const Vector v1 = dominant_vector(v1_state);
  const Vector ov1 = o_ref.matrix * v1;
  const double opsq_exact = ov1.squaredNorm();  // ||O_ref |V1>||^2
  out.success_prob = opsq_exact * opsq_exact;
  if (out.success_prob < 1e-12) {
    std::ostringstream msg;
    msg << "block_encode_offdiag: post-selection success probability "
        << out.success_prob << " too small; expect shot inflation beyond "
        << (out.success_prob > 0 ? 1.0 / out.success_prob : 1e300);
    throw std::runtime_error(msg.str());
  }

  // measured prefactors on the V1 supply
  const MeasuredValue v11m =
      measure_expectation(o_ref.matrix, v1_state, shots, mode, rng);
  const MeasuredValue opsqm =
      measure_expectation(o_ref.matrix * o_ref.matrix, v1_state, shots, mode, rng);
  out.v11_ref = v11m.value;
  out.opsq = opsqm.value;

  // block-encoded state |V_M> via simulated post-selection
  const Vector vm = numkit::kron(Matrix(ov1), Matrix(ov1)).col(0) / opsq_exact;
  if (mode == Mode::kShot && shots > 0) {
    std::uint64_t succ = 0, att = 0;
    while (succ < shots && att < shots * 1000000ULL) {
      ++att;
      succ += rng.bernoulli(out.success_prob) ? 1 : 0;
    }
    out.attempts = att;
    out.successes = succ;
  } else {
    out.attempts = shots;
    out.successes = shots;
  }

  // W-branch of the SW_1(|V1>, rho) test
  SwapTestResult sw = swap_test(v1_state, rho, Complex(1.0, 0.0), 0, rng);
  const Matrix& chi = sw.branch0.mat;
  const double p_branch = sw.p0;

  // SWAP-overlap estimation between |V_M> and the branch, then peel off
  // the known |V1 V1> contribution
  const double overlap_exact = std::real(vm.dot(chi * vm));
  double overlap = overlap_exact;
  if (mode == Mode::kShot && shots > 0) {
    const double p0sw = 0.5 * (1.0 + overlap_exact);
    std::uint64_t zeros = 0;
    for (std::uint64_t i = 0; i < shots; ++i) zeros += rng.bernoulli(p0sw) ? 1 : 0;
    overlap = 2.0 * double(zeros) / double(shots) - 1.0;
  }
  const double v11 = out.v11_ref;
  const double opsq = std::max(out.opsq, 1e-12);
  const double r_weight = std::real(Complex(v1.dot(rho * v1)));  // ~ r
  const double v1v1_overlap = (v11 * v11 / opsq) * (v11 * v11 / opsq);
  // chi = [r |V1V1> + (1-r)/2 |W1>] / p_branch in weights
  const double w_weight = std::max(0.0, (overlap * p_branch - r_weight * v1v1_overlap));
  const double w1_sq = 2.0 * w_weight / std::max(1.0 - r_weight, 1e-12);
  // |<W1|V_M>| = sqrt(2) |v11| |kappa| / ||O|V1>||^2
  out.kappa_abs = std::sqrt(std::max(w1_sq, 0.0)) * opsq / (std::sqrt(2.0) * std::max(std::abs(v11), 1e-12));

  // phase from the prior: |kappa| split into Re/Im by the model ratio
  const double ratio = prior.im_over_re;
  const double denom = std::sqrt(1.0 + ratio * ratio);
  const double re_mag = out.kappa_abs / denom;
  const double im_mag = out.kappa_abs * std::abs(ratio) / denom;
  out.kappa_ref = Complex(prior.re_sign >= 0 ? re_mag : -re_mag,
                          prior.im_sign >= 0 ? im_mag : -im_mag);
  return out;
}

ReferenceProtocolResult reference_protocol(const Matrix& v1_state, const Matrix& rho,
                                           double r, const OverlapSet& ref_overlaps,
                                           const Observable& o_ref, const Observable& o,
                                           std::uint64_t shots, Mode mode, exp::Rng& rng,
                                           double kappa_floor) {
  if (std::abs(ref_overlaps.v12) < kappa_floor) {
    std::ostringstream msg;
    msg << "reference_protocol: |kappa_ref| = " << std::abs(ref_overlaps.v12)
        << " below floor " << kappa_floor << "; division would be ill-conditioned";
    throw std::runtime_error(msg.str());
  }
  if (std::abs(ref_overlaps.v11) < 1e-9) {
    throw std::runtime_error("reference_protocol: <V1|O_ref|V1> vanishes; T cannot be split");
  }
  ReferenceProtocolResult out;
  const Matrix obs2 = numkit::kron(o_ref.matrix, o.matrix);

  // direct measurement on the V1 supply
  const MeasuredValue v11o = measure_expectation(o.matrix, v1_state, shots, mode, rng);

  // SW_i(|V1>, rho): both ancilla branches, measured with O_ref (x) O
  SwapTestResult swi = swap_test(v1_state, rho, Complex(0.0, 1.0), 0, rng);
  const MeasuredValue e0 =
      measure_expectation(obs2, swi.branch0.mat, shots, mode, rng);
  const MeasuredValue e1 =
      measure_expectation(obs2, swi.branch1.mat, shots, mode, rng);
  // branch = r |V1V1><V1V1| + (1-r) |W_{+-i}><W_{+-i}|
  const double sub = r * ref_overlaps.v11 * v11o.value;
  const double a0 = 2.0 * (e0.value - sub) / (1.0 - r);  //  h_i + T
  const double a1 = 2.0 * (e1.value - sub) / (1.0 - r);  // -h_i + T
  out.h_i = 0.5 * (a0 - a1);
  out.t_cross = 0.5 * (a0 + a1);
  const double v22o = (out.t_cross - v11o.value * ref_overlaps.v22) / ref_overlaps.v11;

  // SW_1(rho, rho): even interference term from the ancilla-0 branch
  SwapTestResult sw1 = swap_test(rho, rho, Complex(1.0, 0.0), 0, rng);
  const MeasuredValue f0 =
      measure_expectation(obs2, sw1.branch0.mat, shots, mode, rng);
  const double p0 = sw1.p0;  // 1 - r + r^2 for the rank-2 state
  const double w_part = f0.value * p0 - r * r * ref_overlaps.v11 * v11o.value -
                        (1.0 - r) * (1.0 - r) * ref_overlaps.v22 * v22o;
  // the branch carries weight r(1-r) on |W_1>, and 2<W|obs|W> = h_1 + T
  out.h_1 = 2.0 * w_part / std::max(r * (1.0 - r), 1e-12) - out.t_cross;

  const Complex kappa_int =
      (Complex(out.h_1, 0.0) + Complex(0.0, 1.0) * out.h_i) /
      (2.0 * std::conj(ref_overlaps.v12));

  out.overlaps.v11 = v11o.value;
  out.overlaps.v22 = v22o;
  out.overlaps.v12 = kappa_int;
  out.overlaps.source = "reference_protocol";
  out.rho_copies = 3 * shots;   // SW_i, SW_1 pairs
  out.v1_samples = 2 * shots;
  return out;
}

BSolveReport estimate_b(const BInputs& in, const std::function<double(double)>& F,
                        const BSolverConfig& cfg) {
  BSolveReport report;
  const double det = in.r * (1.0 - in.r);

  auto model_at = [&](double b) -> std::optional<EigenModel> {
    const double bv = b * (1.0 - b);
    if (bv <= 0.0) return std::nullopt;
    const double h2 = 1.0 - det / bv;
    if (h2 < 0.0 || h2 >= 1.0) return std::nullopt;
    try {
      return solve_model(in.r, b);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };

  // inner solve of b M1 + (1-b) F(M1) = m_rho over the observable range
  auto solve_m1 = [&](double b) -> std::optional<double> {
    auto g = [&](double m) { return b * m + (1.0 - b) * F(m) - in.m_rho; };
    const int n = 256;
    double prev_x = cfg.value_lo;
    double prev_g = g(prev_x);
    for (int i = 1; i <= n; ++i) {
      const double x = cfg.value_lo + (cfg.value_hi - cfg.value_lo) * double(i) / n;
      const double gx = g(x);
      if (prev_g == 0.0) return prev_x;
      if (prev_g * gx < 0.0) {
        double lo = prev_x, hi = x, glo = prev_g;
        for (int it = 0; it < cfg.bisect_iters; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double gm = g(mid);
          if (glo * gm <= 0.0) {
            hi = mid;
          } else {
            lo = mid;
            glo = gm;
          }
        }
        return 0.5 * (lo + hi);
      }
      prev_x = x;
      prev_g = gx;
    }
    return std::nullopt;
  };

  // residual of the eigenbasis equation pair with M_c eliminated
  auto residual = [&](double b) -> std::optional<std::pair<double, double>> {
    auto model = model_at(b);
    if (!model) return std::nullopt;
    auto m1 = solve_m1(b);
    if (!m1) return std::nullopt;
    const double fm = F(*m1);
    const auto& ct = model->c_tilde;
    const double g1 = 2.0 * ct[0][0] * ct[1][0];
    const double g2 = 2.0 * ct[0][1] * ct[1][1];
    const double lhs1 = in.m_v1 - (ct[0][0] * ct[0][0] * (*m1) + ct[1][0] * ct[1][0] * fm);
    const double lhs2 = in.m_v2 - (ct[0][1] * ct[0][1] * (*m1) + ct[1][1] * ct[1][1] * fm);
    return std::make_pair(g2 * lhs1 - g1 * lhs2, *m1);
  };

  double prev_b = 0.0, prev_res = 0.0, prev_m1 = 0.0;
  bool have_prev = false;
  for (int i = 1; i < cfg.scan_points; ++i) {
    const double b = double(i) / double(cfg.scan_points);
    auto res = residual(b);
    if (!res) {
      have_prev = false;
      continue;
    }
    if (have_prev && prev_res * res->first <= 0.0 &&
        (prev_res != 0.0 || res->first != 0.0)) {
      double lo = prev_b, hi = b, rlo = prev_res;
      double m1_root = res->second;
      for (int it = 0; it < cfg.bisect_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        auto rm = residual(mid);
        if (!rm) break;
        m1_root = rm->second;
        if (rlo * rm->first <= 0.0) {
          hi = mid;
        } else {
          lo = mid;
          rlo = rm->first;
        }
      }
      const double b_root = 0.5 * (lo + hi);
      auto final_res = residual(b_root);
      BRoot root;
      root.b = b_root;
      root.m1 = m1_root;
      root.residual = final_res ? std::abs(final_res->first) : 1e300;
      // identifiability: the off-diagonal M_c or the source asymmetry
      // must be nonzero at the root
      auto model = model_at(b_root);
      if (model && final_res) {
        const auto& ct = model->c_tilde;
        const double g1 = 2.0 * ct[0][0] * ct[1][0];
        const double fm = F(m1_root);
        const double mc = std::abs(g1) > 1e-12
                              ? (in.m_v1 - ct[0][0] * ct[0][0] * m1_root -
                                 ct[1][0] * ct[1][0] * fm) / g1
                              : 0.0;
        root.nontrivial = std::abs(mc) > cfg.nontrivial_tol ||
                          std::abs(m1_root - fm) > cfg.nontrivial_tol;
      } else {
        root.nontrivial = false;
      }
      report.roots.push_back(root);
    }
    prev_b = b;
    prev_res = res->first;
    prev_m1 = res->second;
    have_prev = true;
  }
  (void)prev_m1;
  bool any_trivial = false;
  for (const auto& r : report.roots) any_trivial |= !r.nontrivial;
  report.ambiguous = report.roots.size() != 1 || any_trivial;
  return report;
}

EigenSupply ideal_supply(const DensityOperator& rho) {
  const numkit::EighResult e = numkit::eigh(rho.mat);
  const Eigen::Index n = e.values.size();
  EigenSupply s;
  s.p_v1 = e.values(n - 1);
  s.v1_state = e.vectors.col(n - 1) * e.vectors.col(n - 1).adjoint();
  s.v2_state = e.vectors.col(n - 2) * e.vectors.col(n - 2).adjoint();
  return s;
}

PipelineResult run_measurement_pipeline(const DensityOperator& rho,
                                        const EigenSupply& supply,
                                        const Observable& o, const Observable& o_ref,
                                        const PipelineConfig& cfg, exp::Rng& rng) {
  PipelineResult out;

  // step 2 first in spirit: the eigenvalue estimate fixes the model
  if (cfg.mode == Mode::kAnalytic) {
    out.r_hat = supply.p_v1;
  } else {
    std::vector<bool> labels(cfg.label_count);
    for (auto&& l : labels) l = rng.bernoulli(supply.p_v1);
    const REstimate re = estimate_r(labels);
    out.r_hat = re.r_hat;
    if (out.r_hat - 0.5 < 10.0 * re.stderr) {
      throw std::runtime_error("measurement pipeline: r ~ 1/2 unsupported at this resolution");
    }
  }
  out.model = solve_model(out.r_hat, cfg.b_known);

  // step 1: reference-observable overlaps (diagonals by direct sampling,
  // off-diagonal through the block encoding)
  const std::uint64_t shots = cfg.mode == Mode::kAnalytic ? 0 : cfg.shots;
  const MeasuredValue v11r =
      measure_expectation(o_ref.matrix, supply.v1_state, shots, cfg.mode, rng);
  const MeasuredValue v22r =
      measure_expectation(o_ref.matrix, supply.v2_state, shots, cfg.mode, rng);
  BlockEncodeResult be = block_encode_offdiag(supply.v1_state, rho.mat, o_ref,
                                              cfg.prior, shots, cfg.mode, rng);
  out.ref_overlaps.v11 = v11r.value;
  out.ref_overlaps.v22 = v22r.value;
  out.ref_overlaps.v12 = be.kappa_ref;
  out.ref_overlaps.source = "block_encoding";

  // steps 3-5: the SWAP-branch protocol for the target observable
  ReferenceProtocolResult rp =
      reference_protocol(supply.v1_state, rho.mat, out.r_hat, out.ref_overlaps, o_ref, o,
                         shots, cfg.mode, rng, cfg.kappa_floor);
  out.obs_overlaps = rp.overlaps;

  out.value_psi1 = reconstruct_observable(out.model, out.obs_overlaps, 1) * o.scale;
  out.value_psi2 = reconstruct_observable(out.model, out.obs_overlaps, 2) * o.scale;
  out.rho_copies = rp.rho_copies + cfg.label_count;
  out.v1_samples = rp.v1_samples + 2 * shots;
  out.v2_samples = shots;
  return out;
}

}  // namespace qpsim::est
