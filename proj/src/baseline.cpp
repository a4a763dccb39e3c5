#include "qpsim/baseline.hpp"

#include <cmath>

namespace qpsim::baseline {

namespace {

// Settings: 0 = computational; then for each pair (i < j) an X basis
// ((|i>+-|j>)/sqrt2 plus the remaining computational vectors) and a Y
// basis ((|i>+-i|j>)/sqrt2 ...). Outcome probabilities have closed forms
// in the entries of rho, so no projector matrices are materialized.
struct Setting {
  int kind = 0;  // 0 computational, 1 X-pair, 2 Y-pair
  Eigen::Index i = 0, j = 0;
};

Setting setting_for(Eigen::Index d, std::uint64_t index) {
  if (index == 0) return {0, 0, 0};
  std::uint64_t k = index - 1;
  const std::uint64_t pair = k / 2;
  const int kind = 1 + int(k % 2);
  // unrank the (i, j) pair
  Eigen::Index i = 0;
  std::uint64_t rem = pair;
  std::uint64_t row = std::uint64_t(d - 1);
  while (rem >= row) {
    rem -= row;
    ++i;
    --row;
  }
  const Eigen::Index j = i + 1 + Eigen::Index(rem);
  return {kind, i, j};
}

// outcome distribution of a setting; outcomes 0..d-1 are the basis
// vectors, with indices i and j replaced by the +/- pair for kind > 0
void setting_probs(const Matrix& rho, const Setting& s, std::vector<double>& probs) {
  const Eigen::Index d = rho.rows();
  probs.resize(std::size_t(d));
  for (Eigen::Index k = 0; k < d; ++k) probs[std::size_t(k)] = std::real(rho(k, k));
  if (s.kind == 1) {
    const double base = 0.5 * std::real(rho(s.i, s.i) + rho(s.j, s.j));
    const double re = std::real(rho(s.i, s.j));
    probs[std::size_t(s.i)] = base + re;  // (|i>+|j>)/sqrt2
    probs[std::size_t(s.j)] = base - re;
  } else if (s.kind == 2) {
    const double base = 0.5 * std::real(rho(s.i, s.i) + rho(s.j, s.j));
    const double im = std::imag(rho(s.i, s.j));
    probs[std::size_t(s.i)] = base - im;  // (|i>+i|j>)/sqrt2
    probs[std::size_t(s.j)] = base + im;
  }
  for (auto& p : probs) p = std::max(p, 0.0);
}

Matrix linear_inversion(const Eigen::Index d,
                        const std::vector<std::vector<double>>& freq) {
  Matrix rho = Matrix::Zero(d, d);
  const auto& comp = freq[0];
  for (Eigen::Index k = 0; k < d; ++k) rho(k, k) = comp[std::size_t(k)];
  std::uint64_t idx = 1;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const auto& fx = freq[std::size_t(idx)];
      const auto& fy = freq[std::size_t(idx + 1)];
      idx += 2;
      const double re = 0.5 * (fx[std::size_t(i)] - fx[std::size_t(j)]);
      const double im = 0.5 * (fy[std::size_t(j)] - fy[std::size_t(i)]);
      rho(i, j) = Complex(re, im);
      rho(j, i) = Complex(re, -im);
    }
  }
  return rho;
}

DensityOperator project_to_state(const Matrix& m) {
  Matrix sym = 0.5 * (m + m.adjoint());
  numkit::EighResult e = numkit::eigh(sym);
  Eigen::VectorXd clipped = e.values.cwiseMax(0.0);
  const double total = clipped.sum();
  if (total <= 0.0) {
    const Eigen::Index d = m.rows();
    return numkit::DensityOperator{Matrix::Identity(d, d) / double(d)};
  }
  clipped /= total;
  Matrix out = e.vectors * clipped.cast<Complex>().asDiagonal() * e.vectors.adjoint();
  return numkit::DensityOperator{std::move(out)};
}

Matrix diluted_mle(const DensityOperator& start,
                   const std::vector<std::vector<double>>& freq,
                   const std::vector<Setting>& settings, int iterations, double dilution) {
  const Eigen::Index d = start.dim();
  Matrix rho = start.mat;
  // guard against rank deficiency at the fixed point
  rho = (1.0 - 1e-6) * rho + (1e-6 / double(d)) * Matrix::Identity(d, d);
  std::vector<double> probs;
  for (int it = 0; it < iterations; ++it) {
    Matrix r_op = Matrix::Zero(d, d);
    for (std::size_t s = 0; s < settings.size(); ++s) {
      setting_probs(rho, settings[s], probs);
      const Setting& st = settings[s];
      for (Eigen::Index k = 0; k < d; ++k) {
        const double f = freq[s][std::size_t(k)];
        if (f <= 0.0) continue;
        const double p = std::max(probs[std::size_t(k)], 1e-12);
        const double w = f / p;
        if (st.kind == 0 || (k != st.i && k != st.j)) {
          r_op(k, k) += w;
        } else {
          // pair projector (|i> + u |j>)(<i| + conj(u) <j|)/2
          const Complex u = st.kind == 1 ? Complex(k == st.i ? 1.0 : -1.0, 0.0)
                                         : Complex(0.0, k == st.i ? 1.0 : -1.0);
          r_op(st.i, st.i) += 0.5 * w;
          r_op(st.j, st.j) += 0.5 * w;
          r_op(st.i, st.j) += 0.5 * w * std::conj(u);
          r_op(st.j, st.i) += 0.5 * w * u;
        }
      }
    }
    r_op /= double(settings.size());
    const Matrix eye = Matrix::Identity(d, d);
    const Matrix step = (1.0 - dilution) * eye + dilution * r_op;
    Matrix next = step * rho * step.adjoint();
    const double tr = std::real(next.trace());
    rho = next / tr;
  }
  return rho;
}

}  // namespace

std::uint64_t design_settings(Eigen::Index d) {
  return 1 + std::uint64_t(d) * std::uint64_t(d - 1);
}

TomographyResult simulate_tomography(const DensityOperator& rho, const TomographyConfig& cfg) {
  const Eigen::Index d = rho.dim();
  if (d < 2) throw std::invalid_argument("simulate_tomography: dimension must be >= 2");
  const std::uint64_t n_settings = design_settings(d);
  std::vector<Setting> settings(n_settings);
  for (std::uint64_t s = 0; s < n_settings; ++s) settings[s] = setting_for(d, s);

  std::vector<std::vector<double>> freq(n_settings, std::vector<double>(std::size_t(d), 0.0));
  std::uint64_t used = 0;
  if (cfg.analytic) {
    for (std::uint64_t s = 0; s < n_settings; ++s) {
      setting_probs(rho.mat, settings[s], freq[s]);
    }
  } else {
    if (cfg.copies < n_settings) {
      throw std::invalid_argument("simulate_tomography: need at least one copy per setting");
    }
    exp::Rng rng(cfg.seed);
    std::vector<double> probs;
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(d), 0);
    for (std::uint64_t s = 0; s < n_settings; ++s) {
      const std::uint64_t m = cfg.copies / n_settings +
                              (s < cfg.copies % n_settings ? 1 : 0);
      setting_probs(rho.mat, settings[s], probs);
      std::fill(counts.begin(), counts.end(), 0);
      for (std::uint64_t c = 0; c < m; ++c) ++counts[rng.categorical(probs)];
      for (Eigen::Index k = 0; k < d; ++k) {
        freq[s][std::size_t(k)] = m > 0 ? double(counts[std::size_t(k)]) / double(m) : 0.0;
      }
      used += m;
    }
  }

  TomographyResult out;
  const Matrix inverted = linear_inversion(d, freq);
  if (cfg.reconstructor == Reconstructor::kLinearInversion) {
    out.rho_bar = project_to_state(inverted);
  } else {
    out.rho_bar = project_to_state(
        diluted_mle(project_to_state(inverted), freq, settings, cfg.mle_iterations,
                    cfg.mle_dilution));
  }
  out.trace_error = numkit::trace_distance(out.rho_bar, rho);
  out.copies_used = cfg.analytic ? 0 : used;
  return out;
}

EigenErrorReport eigen_error(const DensityOperator& rho, const DensityOperator& rho_bar,
                             int tracked) {
  if (rho.dim() != rho_bar.dim()) {
    throw std::invalid_argument("eigen_error: dimension mismatch");
  }
  EigenErrorReport report;
  report.trace_error = numkit::trace_distance(rho, rho_bar);
  const numkit::EighResult et = numkit::eigh(rho.mat);
  const numkit::EighResult eb = numkit::eigh(rho_bar.mat);
  const Eigen::Index d = rho.dim();
  tracked = std::min<int>(tracked, int(d));
  for (int t = 0; t < tracked; ++t) {
    const Eigen::Index idx = d - 1 - t;
    EigenErrorEntry entry;
    entry.index = t;
    entry.eigenvalue = et.values(idx);
    entry.eigenvalue_error = std::abs(et.values(idx) - eb.values(idx));
    // continuation: the perturbed eigenvector with the largest overlap
    Eigen::Index best = idx;
    double best_ov = -1.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double ov = std::abs(et.vectors.col(idx).dot(eb.vectors.col(c)));
      if (ov > best_ov) {
        best_ov = ov;
        best = c;
      }
    }
    numkit::Vector v = et.vectors.col(idx);
    numkit::Vector w = eb.vectors.col(best);
    const Complex ov = v.dot(w);
    if (std::abs(ov) > 0) w *= std::conj(ov) / std::abs(ov);  // phase alignment
    entry.vector_deviation = (v - w).norm();
    double gap = 1e300;
    for (Eigen::Index c = 0; c < d; ++c) {
      if (c == idx) continue;
      gap = std::min(gap, std::abs(et.values(idx) - et.values(c)));
    }
    entry.gap = gap;
    if (gap > 1e-12) {
      entry.dk_bound = report.trace_error / gap;
      if (*entry.dk_bound > 0.0) entry.ratio = entry.vector_deviation / *entry.dk_bound;
    }
    report.entries.push_back(entry);
  }
  return report;
}

double dk_ratio(double r, double eps_tom) {
  if (!(eps_tom > 0.0 && eps_tom < 1.0 - r)) {
    throw std::invalid_argument("dk_ratio: require 0 < eps_tom < 1 - r");
  }
  // canonical 3-dim representation: rho = diag(r, 1-r, 0) and the
  // perturbing direction (|1> + |2>)/sqrt2; the ratio depends on (r, eps)
  // only, so the small explicit block suffices
  Eigen::Matrix3d rho_pert = Eigen::Matrix3d::Zero();
  rho_pert(0, 0) = (1.0 - eps_tom) * r;
  rho_pert(1, 1) = (1.0 - eps_tom) * (1.0 - r) + 0.5 * eps_tom;
  rho_pert(2, 2) = 0.5 * eps_tom;
  rho_pert(1, 2) = rho_pert(2, 1) = 0.5 * eps_tom;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(rho_pert);
  // continuation of |1> (the V2 direction): largest |overlap| eigenvector
  Eigen::Index best = 0;
  double best_ov = -1.0;
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double ov = std::abs(es.eigenvectors()(1, c));
    if (ov > best_ov) {
      best_ov = ov;
      best = c;
    }
  }
  Eigen::Vector3d v = es.eigenvectors().col(best);
  if (v(1) < 0.0) v = -v;  // phase alignment (real case)
  const Eigen::Vector3d target(0.0, 1.0, 0.0);
  const double deviation = (target - v).norm();
  return deviation * (1.0 - r) / eps_tom;
}

std::vector<DkCell> dk_experiment(const std::vector<double>& r_grid,
                                  const std::vector<double>& eps_grid) {
  std::vector<DkCell> cells;
  cells.reserve(r_grid.size() * eps_grid.size());
  for (double r : r_grid) {
    for (double eps : eps_grid) {
      DkCell cell;
      cell.r = r;
      cell.eps_tom = eps;
      if (eps > 0.0 && eps < 1.0 - r) {
        cell.ratio = dk_ratio(r, eps);
        cell.valid = true;
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

ComplexityRow complexity_tables(const ComplexityParams& p) {
  if (!(p.eps_st > 0.0 && p.eps_st < 1.0) || !(p.r > 0.5 && p.r < 1.0)) {
    throw std::invalid_argument("complexity_tables: need eps_st in (0,1) and r in (1/2, 1)");
  }
  const double n2 = p.n * p.n;
  const double log_eps = std::log(1.0 / p.eps_st);
  const double one_minus_r = 1.0 - p.r;
  const double delta = p.delta > 0.0 ? p.delta : p.eps_st;
  const double log_delta = std::log(1.0 / delta);

  ComplexityRow row;
  row.m_qsp = p.const_qsp * log_eps * log_eps / (one_minus_r * std::pow(p.eps_st, 3));
  row.m_tom = p.const_tom * 4.0 * n2 * std::log(1.0 / (p.eps_st * one_minus_r)) /
              (p.eps_st * p.eps_st * one_minus_r * one_minus_r);
  row.m_tom_full = p.const_tom_full * std::pow(p.n, 6) /
                   (p.eps_st * p.eps_st * one_minus_r * one_minus_r);
  row.m_qsp_noisy = p.const_qsp_noisy * log_eps * log_eps /
                    ((1.0 - p.gamma) * (1.0 - p.gamma) * std::pow(one_minus_r, 3) *
                     std::pow(p.eps_st, 3));
  const double sep = 1.0 / ((1.0 - p.gamma) * (1.0 - p.gamma) * one_minus_r * one_minus_r);
  row.two_stage = (1.0 + sep) * log_delta * log_delta / p.eps_st;
  const double gapnum = 1.0 - p.r + p.gamma * p.r - p.gamma / n2;
  const double gapden = (2.0 * p.r - 1.0) * (1.0 - p.gamma) * one_minus_r;
  row.alt_scheme = std::pow(log_delta, 4) * gapnum * gapnum /
                   (p.eps_st * p.eps_st * gapden * gapden);
  row.ratio_noise_free = row.m_tom / row.m_qsp;
  row.ratio_noisy = p.gamma > 0.0 ? row.m_tom_full / row.m_qsp_noisy
                                  : row.m_tom / row.m_qsp;
  return row;
}

ResourceReport resource_counts(int n, double eps_st, double snr, double processing_const) {
  if (n < 2) throw std::invalid_argument("resource_counts: N must be >= 2");
  ResourceReport rep;
  const double log2n = std::log2(double(n));
  const std::uint64_t logreg = std::uint64_t(std::ceil(2.0 * log2n));
  rep.pixel_qubits = std::uint64_t(n) * std::uint64_t(n);
  rep.memory_qubits = 5 * logreg + 1;
  rep.compression_gates = std::uint64_t(std::ceil(double(n) * double(n) * log2n));
  const double log_eps = std::log(1.0 / eps_st);
  rep.processing_gates =
      std::uint64_t(std::ceil(processing_const * log_eps * log_eps / eps_st)) * logreg;
  const double total = double(rep.compression_gates + rep.processing_gates);
  rep.gate_error_threshold = 1.0 / (total * snr);
  return rep;
}

}  // namespace qpsim::baseline
