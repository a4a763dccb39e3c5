// Batch experiment runner: scenes, filter trials, estimation pipelines,
// tomography baselines, Davis-Kahan grids, complexity tables and the
// module selftest. Every run writes a manifest; CSV outputs carry its
// hash so each number is reproducible from the manifest alone.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "qpsim/baseline.hpp"
#include "qpsim/estimation.hpp"
#include "qpsim/experiment.hpp"
#include "qpsim/optics.hpp"
#include "qpsim/qsp.hpp"

using namespace qpsim;
using numkit::Complex;
using numkit::Matrix;
using numkit::Vector;

namespace {

struct GlobalArgs {
  std::string config;
  std::string out = "out";
  std::uint64_t seed = 1;
  std::uint64_t trials = 0;  // 0 = use the config's value
  std::string mode = "";
  unsigned workers = 2;
};

exp::Manifest base_manifest(const GlobalArgs& g, const std::string& command,
                            const exp::KeyValues& cfg) {
  // out-dir and worker count do not influence any computed number, so
  // they stay out of the manifest (identical config + seed => identical
  // bytes regardless of where or how parallel the run was)
  exp::Manifest m;
  m.entries["command"] = command;
  m.entries["seed"] = std::to_string(g.seed);
  if (!g.mode.empty()) m.entries["mode"] = g.mode;
  if (g.trials) m.entries["trials"] = std::to_string(g.trials);
  for (const auto& [k, v] : cfg) m.entries["cfg." + k] = v;
  return m;
}

numkit::DensityOperator synthetic_state(Eigen::Index dim, double r, std::uint64_t seed) {
  exp::Rng rng(seed ^ 0xabcdef12345ULL);
  const Vector v1 = exp::random_state(dim, rng);
  Vector v2 = exp::random_state(dim, rng);
  v2 -= v1 * v1.dot(v2);
  v2 /= v2.norm();
  return numkit::make_density(r * (v1 * v1.adjoint()) + (1.0 - r) * (v2 * v2.adjoint()));
}

struct FilterSource {
  numkit::DensityOperator rho;   // possibly noisy
  double r = 0.0;                // clean top eigenvalue
  double gamma = 0.0;
  Eigen::Index dim = 0;
};

FilterSource load_filter_source(const GlobalArgs& g, const exp::KeyValues& cfg) {
  FilterSource src;
  src.gamma = exp::get_double(cfg, "gamma", 0.0);
  const std::string kind = exp::get_string(cfg, "source", "synthetic");
  if (kind == "scene") {
    const auto scene = optics::load_scene(exp::get_string(cfg, "scene_file", ""));
    const auto built = optics::build_rho(scene);
    src.rho = built.rho;
    src.r = built.truth.top_eigenvalue;
    src.dim = src.rho.dim();
  } else {
    src.dim = exp::get_int(cfg, "dim", 16);
    src.r = exp::get_double(cfg, "r", 0.9);
    src.rho = synthetic_state(src.dim, src.r, g.seed);
  }
  if (src.gamma > 0.0) {
    src.rho = optics::apply_noise(src.rho, {src.gamma});
  }
  return src;
}

int run_scene(const GlobalArgs& g) {
  const auto cfg = exp::load_key_values(g.config);
  const auto scene = optics::load_scene(g.config);
  auto manifest = base_manifest(g, "scene", cfg);
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  const auto built = optics::build_rho(scene);
  const auto e = numkit::eigh(built.rho.mat);
  const Eigen::Index n = e.values.size();
  std::ofstream sum(std::filesystem::path(g.out) / "scene_summary.txt");
  char line[128];
  std::snprintf(line, sizeof(line), "# manifest_hash=%016llx\n",
                (unsigned long long)manifest.hash());
  sum << line;
  sum << "eta1=" << exp::format_double(built.truth.eta1) << "\n";
  sum << "eta2=" << exp::format_double(built.truth.eta2) << "\n";
  sum << "h=" << exp::format_double(built.truth.overlap_h) << "\n";
  sum << "r=" << exp::format_double(built.truth.top_eigenvalue) << "\n";
  for (int i = 0; i < 3 && i < n; ++i) {
    sum << "lambda_" << i + 1 << "=" << exp::format_double(e.values(n - 1 - i)) << "\n";
  }
  optics::dump_state_csv(numkit::PureState{built.truth.psi1}, scene.grid.side,
                         std::filesystem::path(g.out) / "psi1.csv");
  optics::dump_state_csv(numkit::PureState{built.truth.psi2}, scene.grid.side,
                         std::filesystem::path(g.out) / "psi2.csv");
  std::cout << "scene: eta1=" << built.truth.eta1 << " eta2=" << built.truth.eta2
            << " h=" << built.truth.overlap_h << " r=" << built.truth.top_eigenvalue
            << "\n";
  return 0;
}

int run_filter(const GlobalArgs& g) {
  const auto cfg = exp::load_key_values(g.config);
  exp::reject_unknown_keys(cfg,
                           {"source", "scene_file", "dim", "r", "gamma", "eps", "delta",
                            "trials", "two_stage", "trajectory", "steps_margin"},
                           "filter config");
  const FilterSource src = load_filter_source(g, cfg);
  const double eps = exp::get_double(cfg, "eps", 0.1);
  const double delta = exp::get_double(cfg, "delta", 0.05);
  const bool two_stage = exp::get_int(cfg, "two_stage", 0) != 0;
  const bool trajectory = exp::get_int(cfg, "trajectory", 0) != 0;
  const std::uint64_t trials =
      g.trials ? g.trials : std::uint64_t(exp::get_int(cfg, "trials", 200));
  const std::string mode = g.mode.empty() ? "circuit" : g.mode;

  auto manifest = base_manifest(g, "filter", cfg);
  manifest.entries["resolved_mode"] = mode;
  manifest.entries["resolved_trials"] = std::to_string(trials);
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  qsp::PlanRequest req1;
  req1.r_prior = src.r;
  req1.eps = eps;
  req1.delta = delta;
  req1.steps_margin = std::uint64_t(exp::get_int(cfg, "steps_margin", 4));
  const auto plan1 = qsp::make_plan(req1);
  std::optional<qsp::QSPPlan> plan2;
  if (two_stage) {
    qsp::PlanRequest req2 = req1;
    req2.noisy_stage2 = true;
    req2.gamma = src.gamma;
    req2.dim = src.dim;
    plan2 = qsp::make_plan(req2);
  }
  {
    std::ofstream pd(std::filesystem::path(g.out) / "plan.txt");
    pd << plan1.dump();
  }

  // ideal-branch references (for the fidelity columns)
  const auto ideal = qsp::filter_ideal(src.rho, plan1.step, plan1.x);

  std::vector<qsp::FilterLabel> labels(trials);
  std::vector<std::uint64_t> photons(trials, 0);
  std::vector<double> fid1(trials, 0.0), fid2(trials, 0.0);

  const auto e = numkit::eigh(src.rho.mat);
  const Vector v1 = e.vectors.col(src.dim - 1);
  const Vector v2 = e.vectors.col(src.dim - 2);

  auto fidelity_for = [&](const qsp::FilterOutcome& out) {
    const Vector& target = out.label == qsp::FilterLabel::kV1 ? v1 : v2;
    if (out.label == qsp::FilterLabel::kNoise) return 0.0;
    return numkit::state_fidelity(target, out.conditional_state.mat);
  };

  if (mode == "ideal") {
    exp::parallel_trials(trials, g.workers, [&](std::size_t t) {
      exp::Rng rng = exp::trial_rng(g.seed, t);
      std::vector<double> weights;
      for (const auto& br : ideal) weights.push_back(br.probability);
      const auto& branch = ideal[rng.categorical(weights)];
      qsp::FilterOutcome out;
      out.label = branch.label;
      out.conditional_state = branch.conditional_state;
      out.photons = 1;
      labels[t] = out.label;
      photons[t] = out.photons;
      (out.label == qsp::FilterLabel::kV1 ? fid1[t] : fid2[t]) = fidelity_for(out);
    });
  } else if (trajectory) {
    exp::parallel_trials(trials, g.workers, [&](std::size_t t) {
      exp::Rng rng = exp::trial_rng(g.seed, t);
      qpca::PhotonStream stream(src.rho.mat, g.seed ^ t);
      const auto out = qsp::filter_circuit_trajectory(stream, plan1, rng);
      labels[t] = out.label;
      photons[t] = out.photons;
      (out.label == qsp::FilterLabel::kV1 ? fid1[t] : fid2[t]) = fidelity_for(out);
    });
  } else if (two_stage) {
    qpca::PhotonStream chan_stream(src.rho.mat, g.seed);
    const auto chan = qsp::run_two_stage_channel(chan_stream, plan1, *plan2);
    exp::parallel_trials(trials, g.workers, [&](std::size_t t) {
      exp::Rng rng = exp::trial_rng(g.seed, t);
      qpca::PhotonStream stream(src.rho.mat, g.seed ^ t);
      const auto out = qsp::sample_two_stage(chan, stream, rng);
      labels[t] = out.label;
      photons[t] = out.photons;
      (out.label == qsp::FilterLabel::kV1 ? fid1[t] : fid2[t]) = fidelity_for(out);
    });
  } else {
    qpca::PhotonStream chan_stream(src.rho.mat, g.seed);
    const auto chan = qsp::run_circuit_channel(chan_stream, plan1);
    exp::parallel_trials(trials, g.workers, [&](std::size_t t) {
      exp::Rng rng = exp::trial_rng(g.seed, t);
      qpca::PhotonStream stream(src.rho.mat, g.seed ^ t);
      const auto out = qsp::sample_from_channel(chan, stream, plan1, rng);
      labels[t] = out.label;
      photons[t] = out.photons;
      (out.label == qsp::FilterLabel::kV1 ? fid1[t] : fid2[t]) = fidelity_for(out);
    });
  }

  // aggregate
  double freq_v1 = 0.0;
  double mean_ph = 0.0;
  double mean_f1 = 0.0, mean_f2 = 0.0;
  std::size_t n1 = 0, n2 = 0;
  std::vector<std::uint64_t> sorted_ph(photons);
  std::sort(sorted_ph.begin(), sorted_ph.end());
  for (std::size_t t = 0; t < trials; ++t) {
    mean_ph += double(photons[t]);
    if (labels[t] == qsp::FilterLabel::kV1) {
      freq_v1 += 1.0;
      mean_f1 += fid1[t];
      ++n1;
    } else if (labels[t] == qsp::FilterLabel::kV2) {
      mean_f2 += fid2[t];
      ++n2;
    }
  }
  freq_v1 /= double(trials);
  mean_ph /= double(trials);
  if (n1) mean_f1 /= double(n1);
  if (n2) mean_f2 /= double(n2);
  const std::uint64_t p95 = sorted_ph[std::size_t(0.95 * double(trials - 1))];

  exp::CsvWriter csv(std::filesystem::path(g.out) / "filter_sweep.csv",
                     {"r", "gamma", "eps", "delta", "x", "k", "L", "photons_mean",
                      "photons_p95", "label_freq_V1", "fid_V1", "fid_V2"},
                     manifest.hash());
  csv.row_doubles({src.r, src.gamma, eps, delta, plan1.x, double(plan1.k),
                   double(plan1.gate_count), mean_ph, double(p95), freq_v1, mean_f1,
                   mean_f2});
  csv.close();
  std::cout << "filter: trials=" << trials << " freq_V1=" << freq_v1
            << " photons_mean=" << mean_ph << " fid_V1=" << mean_f1 << " fid_V2=" << mean_f2
            << "\n";
  return 0;
}

int run_estimate(const GlobalArgs& g) {
  const auto cfg = exp::load_key_values(g.config);
  exp::reject_unknown_keys(cfg,
                           {"source", "scene_file", "dim", "r", "gamma", "b", "shots",
                            "labels", "observable", "prior_re_sign", "prior_im_sign",
                            "prior_ratio", "eps", "delta"},
                           "estimate config");
  const std::string mode_name = g.mode.empty() ? "analytic" : g.mode;
  const bool circuit_prep = mode_name == "circuit";
  const est::Mode meas_mode =
      (mode_name == "analytic" || mode_name == "ideal") ? est::Mode::kAnalytic
                                                        : est::Mode::kShot;

  const double b = exp::get_double(cfg, "b", 0.85);
  const double h_param = 0.4;
  const Eigen::Index dim = exp::get_int(cfg, "dim", 16);
  // synthetic source pair with known b (scene path mirrors run_scene)
  exp::Rng srng(g.seed ^ 0x5eedULL);
  Vector psi1 = exp::random_state(dim, srng);
  Vector perp = exp::random_state(dim, srng);
  perp -= psi1 * psi1.dot(perp);
  perp /= perp.norm();
  Vector psi2 = h_param * psi1 + std::sqrt(1.0 - h_param * h_param) * perp;
  const auto rho = numkit::make_density(b * (psi1 * psi1.adjoint()) +
                                        (1.0 - b) * (psi2 * psi2.adjoint()));

  auto manifest = base_manifest(g, "estimate", cfg);
  manifest.entries["resolved_mode"] = mode_name;
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  // observable: a pixel projector by default, random otherwise
  const std::string obs_kind = exp::get_string(cfg, "observable", "pixel:0");
  Matrix raw_obs;
  if (obs_kind.rfind("pixel:", 0) == 0) {
    const int idx = std::stoi(obs_kind.substr(6));
    raw_obs = Matrix::Zero(dim, dim);
    raw_obs(idx, idx) = 1.0;
  } else {
    exp::Rng orng(g.seed ^ 0x0b5ULL);
    raw_obs = exp::random_hermitian(dim, orng);
  }
  const est::Observable obs("O", raw_obs);

  // model-gauge eigenvectors for the reference observable and the prior
  const auto e = numkit::eigh(rho.mat);
  const double r_true = e.values(dim - 1);
  const auto model = est::solve_model(r_true, b);
  const Vector v1m = model.c_tilde[0][0] * psi1 + model.c_tilde[1][0] * psi2;
  const Vector v2m = model.c_tilde[0][1] * psi1 + model.c_tilde[1][1] * psi2;
  Matrix raw_ref = v1m * v2m.adjoint() + v2m * v1m.adjoint() +
                   0.5 * Matrix::Identity(dim, dim);
  const est::Observable oref("O_ref", raw_ref);
  const Complex kappa_model = v1m.dot(oref.matrix * v2m);

  est::PipelineConfig pcfg;
  pcfg.b_known = b;
  pcfg.shots = std::uint64_t(exp::get_int(cfg, "shots", 20000));
  pcfg.label_count = std::uint64_t(exp::get_int(cfg, "labels", 20000));
  pcfg.mode = meas_mode;
  pcfg.prior.re_sign = int(exp::get_int(cfg, "prior_re_sign", kappa_model.real() >= 0 ? 1 : -1));
  pcfg.prior.im_sign = int(exp::get_int(cfg, "prior_im_sign", kappa_model.imag() >= 0 ? 1 : -1));
  pcfg.prior.im_over_re = exp::get_double(
      cfg, "prior_ratio",
      std::abs(kappa_model.real()) > 1e-14 ? kappa_model.imag() / kappa_model.real() : 0.0);

  est::EigenSupply supply;
  if (circuit_prep) {
    qsp::PlanRequest req;
    req.r_prior = r_true;
    req.eps = exp::get_double(cfg, "eps", 0.1);
    req.delta = exp::get_double(cfg, "delta", 0.05);
    const auto plan = qsp::make_plan(req);
    qpca::PhotonStream stream(rho.mat, g.seed);
    const auto chan = qsp::run_circuit_channel(stream, plan);
    supply.p_v1 = chan.p_keep;
    supply.v1_state = chan.cond_keep;
    supply.v2_state = chan.cond_drop;
  } else {
    supply = est::ideal_supply(rho);
  }

  exp::Rng rng(g.seed);
  const auto out = est::run_measurement_pipeline(rho, supply, obs, oref, pcfg, rng);

  const double direct1 = std::real(psi1.dot(raw_obs * psi1));
  const double direct2 = std::real(psi2.dot(raw_obs * psi2));

  exp::CsvWriter csv(std::filesystem::path(g.out) / "estimation.csv",
                     {"quantity", "estimate", "stderr", "shots", "mode", "seed"},
                     manifest.hash());
  auto row = [&](const std::string& name, double value, double stderr_) {
    csv.row({name, exp::format_double(value), exp::format_double(stderr_),
             std::to_string(pcfg.shots), mode_name, std::to_string(g.seed)});
  };
  const double stat = meas_mode == est::Mode::kShot
                          ? 1.0 / std::sqrt(double(pcfg.shots))
                          : 0.0;
  row("r_hat", out.r_hat, stat);
  row("h", out.model.h, 0.0);
  row("v11_ref", out.ref_overlaps.v11, stat);
  row("v22_ref", out.ref_overlaps.v22, stat);
  row("kappa_ref_abs", std::abs(out.ref_overlaps.v12), stat);
  row("v11_obs", out.obs_overlaps.v11, stat);
  row("v22_obs", out.obs_overlaps.v22, stat);
  row("kappa_int_re", out.obs_overlaps.v12.real(), stat);
  row("psi1_obs", out.value_psi1, stat);
  row("psi2_obs", out.value_psi2, stat);
  row("psi1_obs_direct", direct1, 0.0);
  row("psi2_obs_direct", direct2, 0.0);
  row("rho_copies", double(out.rho_copies), 0.0);
  csv.close();
  std::cout << "estimate: psi2_obs=" << out.value_psi2 << " direct=" << direct2
            << " |err|=" << std::abs(out.value_psi2 - direct2) << "\n";
  return 0;
}

int run_tomography(const GlobalArgs& g) {
  const auto cfg = exp::load_key_values(g.config);
  exp::reject_unknown_keys(cfg, {"dim", "r", "copies_list", "reps", "reconstructor"},
                           "tomography config");
  const Eigen::Index dim = exp::get_int(cfg, "dim", 16);
  const double r = exp::get_double(cfg, "r", 0.8);
  const int reps = int(exp::get_int(cfg, "reps", 3));
  const std::string rec = exp::get_string(cfg, "reconstructor", "linear");
  const std::string copies_list = exp::get_string(cfg, "copies_list", "20000,80000,320000");

  auto manifest = base_manifest(g, "tomography", cfg);
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  const auto rho = synthetic_state(dim, r, g.seed);
  exp::CsvWriter csv(std::filesystem::path(g.out) / "tomography_sweep.csv",
                     {"dim", "M", "trace_error", "eigvec_error", "seed"}, manifest.hash());
  std::stringstream list(copies_list);
  std::string tok;
  while (std::getline(list, tok, ',')) {
    const std::uint64_t copies = std::stoull(tok);
    for (int i = 0; i < reps; ++i) {
      baseline::TomographyConfig tcfg;
      tcfg.copies = copies;
      tcfg.seed = g.seed + 7919 * std::uint64_t(i) + copies;
      tcfg.reconstructor = rec == "mle" ? baseline::Reconstructor::kDilutedMLE
                                        : baseline::Reconstructor::kLinearInversion;
      const auto res = baseline::simulate_tomography(rho, tcfg);
      const auto err = baseline::eigen_error(rho, res.rho_bar);
      csv.row_doubles({double(dim), double(copies), res.trace_error,
                       err.entries.size() > 1 ? err.entries[1].vector_deviation : 0.0,
                       double(tcfg.seed)});
    }
  }
  csv.close();
  std::cout << "tomography: sweep written\n";
  return 0;
}

int run_davis_kahan(const GlobalArgs& g) {
  exp::KeyValues cfg;
  if (!g.config.empty()) cfg = exp::load_key_values(g.config);
  exp::reject_unknown_keys(cfg, {"r_min", "r_max", "r_steps", "eps_steps"}, "dk config");
  const double r_min = exp::get_double(cfg, "r_min", 0.55);
  const double r_max = exp::get_double(cfg, "r_max", 0.95);
  const int r_steps = int(exp::get_int(cfg, "r_steps", 9));
  const int eps_steps = int(exp::get_int(cfg, "eps_steps", 24));

  auto manifest = base_manifest(g, "davis-kahan", cfg);
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  exp::CsvWriter csv(std::filesystem::path(g.out) / "dk_ratio.csv",
                     {"r", "eps_tom", "ratio"}, manifest.hash());
  for (int i = 0; i < r_steps; ++i) {
    const double r = r_min + (r_max - r_min) * double(i) / std::max(1, r_steps - 1);
    for (int j = 1; j <= eps_steps; ++j) {
      const double eps = (1.0 - r) * double(j) / double(eps_steps + 1);
      csv.row_doubles({r, eps, baseline::dk_ratio(r, eps)});
    }
  }
  csv.close();
  std::cout << "davis-kahan: grid written\n";
  return 0;
}

int run_complexity(const GlobalArgs& g) {
  exp::KeyValues cfg;
  if (!g.config.empty()) cfg = exp::load_key_values(g.config);
  exp::reject_unknown_keys(
      cfg, {"n_list", "r_list", "eps_list", "gamma", "delta", "const_qsp", "const_tom"},
      "complexity config");
  const std::string n_list = exp::get_string(cfg, "n_list", "4,10,20,32");
  const std::string r_list = exp::get_string(cfg, "r_list", "0.75,0.9,0.909090909090909,0.95");
  const std::string eps_list = exp::get_string(cfg, "eps_list", "0.2,0.1,0.05");
  const double gamma = exp::get_double(cfg, "gamma", 0.0);

  auto manifest = base_manifest(g, "complexity", cfg);
  manifest.entries["log_convention"] = "natural";
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  exp::CsvWriter csv(std::filesystem::path(g.out) / "complexity_grid.csv",
                     {"N", "r", "gamma", "eps_st", "m_qsp", "m_tom", "m_tom_full",
                      "m_qsp_noisy", "two_stage", "alt_scheme", "ratio", "const_qsp",
                      "const_tom"},
                     manifest.hash());
  auto split = [](const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
  };
  baseline::ComplexityParams p;
  p.const_qsp = exp::get_double(cfg, "const_qsp", 1.0);
  p.const_tom = exp::get_double(cfg, "const_tom", 1.0);
  p.gamma = gamma;
  p.delta = exp::get_double(cfg, "delta", 0.0);
  double headline = 0.0;
  for (double n : split(n_list)) {
    for (double r : split(r_list)) {
      for (double eps : split(eps_list)) {
        p.n = n;
        p.r = r;
        p.eps_st = eps;
        const auto row = baseline::complexity_tables(p);
        const double ratio = gamma > 0.0 ? row.ratio_noisy : row.ratio_noise_free;
        if (std::abs(n - 10.0) < 0.5 && std::abs(eps - 0.1) < 1e-9) headline = ratio;
        csv.row_doubles({n, r, gamma, eps, row.m_qsp, row.m_tom, row.m_tom_full,
                         row.m_qsp_noisy, row.two_stage, row.alt_scheme, ratio,
                         p.const_qsp, p.const_tom});
      }
    }
  }
  csv.close();
  std::cout << "complexity: grid written (N=10, eps=0.1 ratio ~ " << headline << ")\n";
  return 0;
}

int run_resources(const GlobalArgs& g, int n, double eps, double snr) {
  exp::KeyValues cfg;
  cfg["n"] = std::to_string(n);
  cfg["eps_st"] = exp::format_double(eps);
  cfg["snr"] = exp::format_double(snr);
  auto manifest = base_manifest(g, "resources", cfg);
  std::filesystem::create_directories(g.out);
  manifest.write(std::filesystem::path(g.out) / "manifest.txt");

  const auto rep = baseline::resource_counts(n, eps, snr);
  std::ofstream out(std::filesystem::path(g.out) / "resources.txt");
  char line[128];
  std::snprintf(line, sizeof(line), "# manifest_hash=%016llx\n",
                (unsigned long long)manifest.hash());
  out << line;
  out << "pixel_qubits=" << rep.pixel_qubits << "\n";
  out << "memory_qubits=" << rep.memory_qubits << "\n";
  out << "compression_gates=" << rep.compression_gates << "\n";
  out << "processing_gates=" << rep.processing_gates << "\n";
  out << "gate_error_threshold=" << exp::format_double(rep.gate_error_threshold) << "\n";
  std::cout << "resources: N=" << n << " pixel_qubits=" << rep.pixel_qubits
            << " memory_qubits=" << rep.memory_qubits
            << " gate_error_threshold=" << rep.gate_error_threshold << "\n";
  return 0;
}

int run_selftest(const GlobalArgs& g) {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "PASS" : "FAIL") << " " << name << "\n";
    if (!ok) ++failures;
  };
  exp::Rng rng(g.seed);
  try {
    // numkit: channel trace preservation and eigh round trip
    {
      const auto rho = exp::random_density(4, 2, rng);
      const auto sigma = exp::random_density(4, 3, rng);
      const Matrix u = exp::random_unitary(16, rng);
      const Matrix joint = u * numkit::kron(rho.mat, sigma.mat) * u.adjoint();
      const Matrix out = numkit::partial_trace(joint, {4, 4}, 0);
      check("numkit.channel_trace", std::abs(out.trace() - Complex(1.0)) < 1e-10);
      const Matrix h = exp::random_hermitian(8, rng);
      const auto e = numkit::eigh(h);
      const Matrix rebuilt =
          e.vectors * e.values.cast<Complex>().asDiagonal() * e.vectors.adjoint();
      check("numkit.eigh_roundtrip", (rebuilt - h).cwiseAbs().maxCoeff() < 1e-9);
    }
    // qpca: closed form against the joint-space oracle
    {
      const auto rho = exp::random_density(3, 2, rng);
      const auto sigma = exp::random_density(3, 3, rng);
      const Matrix u = qpca::exp_swap(3, -0.2);
      const Matrix joint = u * numkit::kron(rho.mat, sigma.mat) * u.adjoint();
      const Matrix oracle = numkit::partial_trace(joint, {3, 3}, 1);
      check("qpca.lloyd_closed_form",
            (qpca::lloyd_step(sigma.mat, rho.mat, 0.2) - oracle).cwiseAbs().maxCoeff() <
                1e-12);
    }
    // qsp: polynomial contract and plan identity
    {
      qsp::StepSpec spec{0.8, 0.15, 0.05};
      const auto poly = qsp::build_step_poly(spec);
      const auto rep = qsp::check_step_poly(poly, spec);
      check("qsp.step_poly_contract", rep.ok);
      qsp::PlanRequest req;
      req.r_prior = 0.9;
      req.eps = 0.2;
      req.delta = 0.2;
      const auto plan = qsp::make_plan(req);
      check("qsp.budget_identity",
            std::abs(plan.eps_gate * plan.gate_count - plan.eps) < 1e-12);
      const auto rho = synthetic_state(4, 0.9, g.seed);
      qpca::PhotonStream stream(rho.mat);
      const auto chan = qsp::run_circuit_channel(stream, plan);
      check("qsp.circuit_label", std::abs(chan.p_keep - 0.9) < 0.2);
      check("qsp.photon_ledger", stream.consumed == plan.predicted_photons);
    }
    // estimation: analytic identity on one scene
    {
      const Eigen::Index dim = 5;
      Vector psi1 = exp::random_state(dim, rng);
      Vector perp = exp::random_state(dim, rng);
      perp -= psi1 * psi1.dot(perp);
      perp /= perp.norm();
      const double h = 0.5, b = 0.8;
      Vector psi2 = h * psi1 + std::sqrt(1 - h * h) * perp;
      const auto rho = numkit::make_density(b * (psi1 * psi1.adjoint()) +
                                            (1 - b) * (psi2 * psi2.adjoint()));
      const auto e = numkit::eigh(rho.mat);
      const auto model = est::solve_model(e.values(dim - 1), b);
      check("estimation.model_h", std::abs(model.h - h) < 1e-9);
      const Vector v1m = model.c_tilde[0][0] * psi1 + model.c_tilde[1][0] * psi2;
      const Vector v2m = model.c_tilde[0][1] * psi1 + model.c_tilde[1][1] * psi2;
      const est::Observable obs("O", exp::random_hermitian(dim, rng));
      const est::Observable oref(
          "O_ref", Matrix(v1m * v2m.adjoint() + v2m * v1m.adjoint() +
                          0.5 * Matrix::Identity(dim, dim)));
      est::PipelineConfig pcfg;
      pcfg.b_known = b;
      pcfg.mode = est::Mode::kAnalytic;
      const Complex kap = v1m.dot(oref.matrix * v2m);
      pcfg.prior.re_sign = kap.real() >= 0 ? 1 : -1;
      pcfg.prior.im_sign = kap.imag() >= 0 ? 1 : -1;
      pcfg.prior.im_over_re = kap.imag() / kap.real();
      const auto supply = est::ideal_supply(rho);
      const auto out =
          est::run_measurement_pipeline(rho, supply, obs, oref, pcfg, rng);
      const double direct = std::real(psi2.dot(obs.matrix * psi2)) * obs.scale;
      check("estimation.analytic_identity", std::abs(out.value_psi2 - direct) < 1e-8);
    }
    // baseline: tomography analytic limit and dk bound
    {
      const auto rho = synthetic_state(4, 0.8, g.seed + 1);
      baseline::TomographyConfig cfg;
      cfg.analytic = true;
      const auto res = baseline::simulate_tomography(rho, cfg);
      check("baseline.tomography_exact", res.trace_error < 1e-10);
      check("baseline.dk_bound", baseline::dk_ratio(0.8, 0.05) <= 1.0 + 1e-6);
    }
  } catch (const std::exception& ex) {
    std::cout << "FAIL exception: " << ex.what() << "\n";
    ++failures;
  }
  std::cout << (failures ? "selftest: FAILURES " : "selftest: all passed ") << failures
            << "\n";
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantum-processing imaging simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config, "key=value config file")->envname("QPSIM_CONFIG");
  app.add_option("--seed", g.seed, "master seed")->envname("QPSIM_SEED");
  app.add_option("--trials", g.trials, "trial count override")->envname("QPSIM_TRIALS");
  app.add_option("--mode", g.mode, "ideal|circuit|analytic|shot")
      ->envname("QPSIM_MODE")
      ->check(CLI::IsMember({"", "ideal", "circuit", "analytic", "shot"}));
  app.add_option("--out", g.out, "output directory")->envname("QPSIM_OUT");
  app.add_option("--workers", g.workers, "worker threads")->envname("QPSIM_WORKERS");

  auto* scene = app.add_subcommand("scene", "build a scene and dump the heralded state");
  auto* filter = app.add_subcommand("filter", "filter trial loop");
  auto* estimate = app.add_subcommand("estimate", "measurement pipeline");
  auto* tomo = app.add_subcommand("tomography", "classical baseline sweep");
  auto* dk = app.add_subcommand("davis-kahan", "eigenvector perturbation grid");
  auto* complexity = app.add_subcommand("complexity", "sampling-complexity tables");
  auto* resources = app.add_subcommand("resources", "qubit and gate counts");
  auto* selftest = app.add_subcommand("selftest", "module invariant checks");

  int res_n = 10;
  double res_eps = 0.1;
  double res_snr = 10.0;
  resources->add_option("--n", res_n, "pixel side N");
  resources->add_option("--eps", res_eps, "target statistical error");
  resources->add_option("--snr", res_snr, "target signal-to-noise ratio");

  CLI11_PARSE(app, argc, argv);

  try {
    if (scene->parsed()) return run_scene(g);
    if (filter->parsed()) return run_filter(g);
    if (estimate->parsed()) return run_estimate(g);
    if (tomo->parsed()) return run_tomography(g);
    if (dk->parsed()) return run_davis_kahan(g);
    if (complexity->parsed()) return run_complexity(g);
    if (resources->parsed()) return run_resources(g, res_n, res_eps, res_snr);
    if (selftest->parsed()) return run_selftest(g);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
