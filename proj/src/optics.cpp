#include "qpsim/optics.hpp"

#include <fftw3.h>

#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "qpsim/experiment.hpp"

namespace qpsim::optics {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Shared FFT result for one (pupil, source-independent) transform: the
// padded pupil spectrum sampled at f = m / (M * pitch), plus metadata for
// bilinear lookups.
struct PupilSpectrum {
  Eigen::MatrixXcd values;  // centered frequency layout
  double df = 0.0;          // frequency grid spacing
  int size = 0;

  Complex interpolate(double fx, double fy) const;
};

namespace {

inline Complex catmull_rom(double t, Complex a, Complex b, Complex c, Complex d) {
  return b + 0.5 * t *
                 (c - a + t * (2.0 * a - 5.0 * b + 4.0 * c - d + t * (3.0 * (b - c) + d - a)));
}

}  // namespace

// Bicubic (Catmull-Rom) lookup: C1 continuity keeps the pixel quadrature
// stable under order refinement, which bilinear kinks would spoil.
Complex PupilSpectrum::interpolate(double fx, double fy) const {
  const double half = double(size) / 2.0;
  const double gx = fx / df + half;
  const double gy = fy / df + half;
  const int ix = int(std::floor(gx));
  const int iy = int(std::floor(gy));
  if (ix < 1 || iy < 1 || ix + 2 >= size || iy + 2 >= size) {
    throw std::runtime_error("pupil spectrum lookup outside padded grid");
  }
  const double tx = gx - ix;
  const double ty = gy - iy;
  Complex rows[4];
  for (int r = -1; r <= 2; ++r) {
    rows[r + 1] = catmull_rom(ty, values(ix + r, iy - 1), values(ix + r, iy),
                              values(ix + r, iy + 1), values(ix + r, iy + 2));
  }
  return catmull_rom(tx, rows[0], rows[1], rows[2], rows[3]);
}

PupilSpectrum transform_pupil(const PupilModel& pupil) {
  const int ps = int(pupil.samples());
  const int m = ps * pupil.pad_factor;
  std::vector<Complex> data(std::size_t(m) * m, Complex(0.0));
  for (int i = 0; i < ps; ++i) {
    for (int j = 0; j < ps; ++j) {
      data[std::size_t(i) * m + j] =
          pupil.pupil(i, j) * std::polar(1.0, pupil.phase(i, j));
    }
  }
  {
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      plan = fftw_plan_dft_2d(m, m, reinterpret_cast<fftw_complex*>(data.data()),
                              reinterpret_cast<fftw_complex*>(data.data()),
                              FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(plan);
  }
  PupilSpectrum spec;
  spec.size = m;
  spec.df = 1.0 / (double(m) * pupil.pitch);
  spec.values.resize(m, m);
  // continuous transform: F(f) = pitch^2 e^{2 pi i c pitch (fx + fy)} DFT,
  // with samples centered at x_a = (a - c) pitch
  const double c0 = 0.5 * double(ps - 1);
  for (int a = 0; a < m; ++a) {
    const int ka = (a + m / 2) % m;  // centered index -> DFT index
    const double fx = (double(a) - double(m) / 2.0) * spec.df;
    for (int b = 0; b < m; ++b) {
      const int kb = (b + m / 2) % m;
      const double fy = (double(b) - double(m) / 2.0) * spec.df;
      const Complex phase = std::polar(pupil.pitch * pupil.pitch,
                                       2.0 * kPi * c0 * pupil.pitch * (fx + fy));
      spec.values(a, b) = phase * data[std::size_t(ka) * m + kb];
    }
  }
  return spec;
}

void nyquist_check(const PupilModel& pupil, const PointSource& source, double umax,
                   double vmax) {
  const double fmax_x =
      (umax / pupil.image_distance + std::abs(source.xi) / pupil.object_distance) /
      pupil.wavelength;
  const double fmax_y =
      (vmax / pupil.image_distance + std::abs(source.nu) / pupil.object_distance) /
      pupil.wavelength;
  const double fnyq = 0.5 / pupil.pitch;
  // interpolation needs one spare sample at the border
  const double fgrid = fnyq - 2.0 / (double(pupil.samples() * pupil.pad_factor) * pupil.pitch);
  const double need = std::max(fmax_x, fmax_y);
  if (need > fgrid) {
    std::ostringstream msg;
    msg << "psf_field: pupil sampling violates the Nyquist condition: need pitch <= "
        << 0.5 / need << " m (have " << pupil.pitch << " m)";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

void PupilModel::validate() const {
  if (wavelength <= 0 || object_distance <= 0 || image_distance <= 0 || pitch <= 0) {
    throw std::invalid_argument("PupilModel: geometry must be positive");
  }
  if (pupil.rows() != pupil.cols() || pupil.rows() < 4) {
    throw std::invalid_argument("PupilModel: pupil grid must be square");
  }
  if (phase.rows() != pupil.rows() || phase.cols() != pupil.cols()) {
    throw std::invalid_argument("PupilModel: phase grid must match the pupil grid");
  }
  const Eigen::Index n = pupil.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pupil(i, 0) != 0.0 || pupil(i, n - 1) != 0.0 || pupil(0, i) != 0.0 ||
        pupil(n - 1, i) != 0.0) {
      throw std::invalid_argument("PupilModel: support must keep a zero boundary ring");
    }
  }
  if (phase.maxCoeff() >= kPi || phase.minCoeff() < -kPi) {
    throw std::invalid_argument("PupilModel: phase values must lie in [-pi, pi)");
  }
}

PupilModel make_circular_pupil(double radius, int samples, double wavelength,
                               double z_o, double z_i) {
  PupilModel p;
  p.wavelength = wavelength;
  p.object_distance = z_o;
  p.image_distance = z_i;
  const double window = 2.2 * (2.0 * radius);
  p.pitch = window / samples;
  p.pupil = Eigen::MatrixXd::Zero(samples, samples);
  p.phase = Eigen::MatrixXd::Zero(samples, samples);
  const double c = 0.5 * double(samples - 1);
  const int sub = 16;  // area-coverage subsampling for boundary cells
  for (int i = 0; i < samples; ++i) {
    for (int j = 0; j < samples; ++j) {
      const double x = (i - c) * p.pitch;
      const double y = (j - c) * p.pitch;
      const double rr = std::hypot(x, y);
      const double margin = p.pitch * M_SQRT1_2;
      if (rr <= radius - margin) {
        p.pupil(i, j) = 1.0;
      } else if (rr < radius + margin) {
        int inside = 0;
        for (int a = 0; a < sub; ++a) {
          const double xs = x + ((a + 0.5) / sub - 0.5) * p.pitch;
          for (int b = 0; b < sub; ++b) {
            const double ys = y + ((b + 0.5) / sub - 0.5) * p.pitch;
            if (xs * xs + ys * ys <= radius * radius) ++inside;
          }
        }
        p.pupil(i, j) = double(inside) / double(sub * sub);
      }
    }
  }
  p.validate();
  return p;
}

double PixelGrid::center_u(int m) const {
  return origin + (double(m) - 0.5 * double(side - 1)) * pitch;
}

double PixelGrid::center_v(int n) const { return center_u(n); }

double PixelGrid::profile_value(double du, double dv) const {
  if (profile == PixelProfile::kFlatTop) {
    return 1.0 / pitch;
  }
  // truncated Gaussian, renormalized over the pixel
  const double s = 0.35 * pitch;
  const double norm_1d = std::sqrt(s * std::sqrt(kPi) * std::erf(0.5 * pitch / s));
  return std::exp(-(du * du + dv * dv) / (2.0 * s * s)) / (norm_1d * norm_1d);
}

void Scene::validate() const {
  pupil.validate();
  if (!(relative_brightness >= 0.0 && relative_brightness <= 1.0)) {
    throw std::invalid_argument("Scene: b must lie in [0, 1]");
  }
  if (!(vacuum_probability > 0.0 && vacuum_probability <= 1.0)) {
    throw std::invalid_argument("Scene: delta_vac must lie in (0, 1]");
  }
  if (grid.side < 1 || grid.pitch <= 0.0) {
    throw std::invalid_argument("Scene: pixel grid invalid");
  }
}

void NoiseModel::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("NoiseModel: gamma must lie in [0, 1]");
  }
}

std::vector<Complex> psf_field(const PupilModel& pupil, const PointSource& source,
                               const std::vector<std::pair<double, double>>& points) {
  pupil.validate();
  double umax = 0.0, vmax = 0.0;
  for (const auto& [u, v] : points) {
    umax = std::max(umax, std::abs(u));
    vmax = std::max(vmax, std::abs(v));
  }
  nyquist_check(pupil, source, umax, vmax);
  const PupilSpectrum spec = transform_pupil(pupil);
  const double k = pupil.wavenumber();
  const double zo = pupil.object_distance;
  const double zi = pupil.image_distance;
  const Complex src_phase =
      std::polar(1.0 / (pupil.wavelength * pupil.wavelength * zo * zi),
                 k * (source.xi * source.xi + source.nu * source.nu) / (2.0 * zo));
  std::vector<Complex> out;
  out.reserve(points.size());
  for (const auto& [u, v] : points) {
    const double fx = (u / zi + source.xi / zo) / pupil.wavelength;
    const double fy = (v / zi + source.nu / zo) / pupil.wavelength;
    const Complex det_phase = std::polar(1.0, k * (u * u + v * v) / (2.0 * zi));
    out.push_back(src_phase * det_phase * spec.interpolate(fx, fy));
  }
  return out;
}

FieldFn psf_field_fn(const PupilModel& pupil, const PointSource& source) {
  pupil.validate();
  auto spec = std::make_shared<PupilSpectrum>(transform_pupil(pupil));
  const double k = pupil.wavenumber();
  const double zo = pupil.object_distance;
  const double zi = pupil.image_distance;
  const double lambda = pupil.wavelength;
  const double xi = source.xi;
  const double nu = source.nu;
  const Complex src_phase = std::polar(1.0 / (lambda * lambda * zo * zi),
                                       k * (xi * xi + nu * nu) / (2.0 * zo));
  return [=](double u, double v) {
    const double fx = (u / zi + xi / zo) / lambda;
    const double fy = (v / zi + nu / zo) / lambda;
    const Complex det_phase = std::polar(1.0, k * (u * u + v * v) / (2.0 * zi));
    return src_phase * det_phase * spec->interpolate(fx, fy);
  };
}

namespace {

template <int Order>
Complex pixel_integral(const FieldFn& field, const PixelGrid& grid, double cu, double cv) {
  using G = boost::math::quadrature::gauss<double, Order>;
  const double h = 0.5 * grid.pitch;
  Complex acc = 0.0;
  for (std::size_t a = 0; a < G::abscissa().size(); ++a) {
    const double xs[2] = {-G::abscissa()[a], G::abscissa()[a]};
    const double wa = G::weights()[a];
    for (double ux : xs) {
      for (std::size_t b = 0; b < G::abscissa().size(); ++b) {
        const double wb = G::weights()[b];
        const double ys[2] = {-G::abscissa()[b], G::abscissa()[b]};
        for (double vy : ys) {
          const double du = ux * h;
          const double dv = vy * h;
          acc += wa * wb * grid.profile_value(du, dv) * field(cu + du, cv + dv);
          if (G::abscissa()[b] == 0.0) break;
        }
      }
      if (G::abscissa()[a] == 0.0) break;
    }
  }
  return acc * h * h;
}

}  // namespace

PureState pixelate(const FieldFn& field, const PixelGrid& grid, const PixelateOptions& opts) {
  const int n = grid.side;
  Vector amps(n * n);
  for (int m = 0; m < n; ++m) {
    for (int q = 0; q < n; ++q) {
      const double cu = grid.center_u(m);
      const double cv = grid.center_v(q);
      const Complex val = opts.quadrature_order >= 16
                              ? pixel_integral<16>(field, grid, cu, cv)
                              : pixel_integral<8>(field, grid, cu, cv);
      amps(m * n + q) = val;
    }
  }
  const double eta = amps.squaredNorm();
  if (eta < opts.eta_floor) {
    std::ostringstream msg;
    msg << "pixelate: captured energy eta=" << eta << " below floor " << opts.eta_floor
        << "; the source missed the detector";
    throw std::runtime_error(msg.str());
  }
  if (eta > 1.0 + 1e-9) {
    throw std::runtime_error("pixelate: eta exceeds 1; profile normalization broken");
  }
  return PureState(amps, 1.0 - eta);
}

// By Parseval the Eq.-A2 kernel's detector-plane norm is
// ||P||_L2 / (lambda z_o); dividing it out makes eta a capture fraction.
FieldFn normalized_field_fn(const PupilModel& pupil, const PointSource& source) {
  const double l2 = pupil.pitch * pupil.pitch * pupil.pupil.array().square().sum();
  const double scale = pupil.wavelength * pupil.object_distance / std::sqrt(l2);
  FieldFn raw = psf_field_fn(pupil, source);
  return [raw, scale](double u, double v) { return scale * raw(u, v); };
}

HeraldedState build_rho(const Scene& scene, const PixelateOptions& opts) {
  scene.validate();
  PureState s1 = pixelate(normalized_field_fn(scene.pupil, scene.source1), scene.grid, opts);
  PureState s2 = pixelate(normalized_field_fn(scene.pupil, scene.source2), scene.grid, opts);
  Vector psi1 = s1.amplitudes;
  Vector psi2 = s2.amplitudes;
  // fix the gauge: rotate psi2 so the mutual overlap is real nonnegative
  const Complex zeta = psi1.dot(psi2);
  if (std::abs(zeta) > 0.0) {
    psi2 *= std::conj(zeta) / std::abs(zeta);
  }
  const double h = std::abs(zeta);
  const double b = scene.relative_brightness;
  Matrix rho = b * (psi1 * psi1.adjoint()) + (1.0 - b) * (psi2 * psi2.adjoint());
  HeraldedState out{numkit::make_density(rho), {}};
  out.truth.psi1 = psi1;
  out.truth.psi2 = psi2;
  out.truth.overlap_h = h;
  out.truth.eta1 = 1.0 - s1.norm_deficit;
  out.truth.eta2 = 1.0 - s2.norm_deficit;
  const double disc = 1.0 - 4.0 * b * (1.0 - b) * (1.0 - h * h);
  out.truth.top_eigenvalue = 0.5 * (1.0 + std::sqrt(std::max(disc, 0.0)));
  return out;
}

DensityOperator apply_noise(const DensityOperator& rho, const NoiseModel& noise) {
  noise.validate();
  const Eigen::Index d = rho.dim();
  Matrix mixed = (1.0 - noise.gamma) * rho.mat +
                 (noise.gamma / double(d)) * Matrix::Identity(d, d);
  return numkit::make_density(mixed);
}

Scene load_scene(const std::filesystem::path& file) {
  const exp::KeyValues kv = exp::load_key_values(file);
  exp::reject_unknown_keys(
      kv,
      {"lambda_m", "z_o_m", "z_i_m", "pupil_radius_m", "pupil_samples", "grid_n",
       "pixel_pitch_m", "source1_xi_m", "source1_nu_m", "source2_xi_m", "source2_nu_m",
       "b", "delta_vac", "gamma", "phase_mask_file", "pad_factor", "grid_origin_m",
       "pixel_profile"},
      "scene file");
  Scene scene;
  scene.pupil = make_circular_pupil(exp::get_double(kv, "pupil_radius_m"),
                                    int(exp::get_int(kv, "pupil_samples", 64)),
                                    exp::get_double(kv, "lambda_m"),
                                    exp::get_double(kv, "z_o_m"),
                                    exp::get_double(kv, "z_i_m"));
  scene.pupil.pad_factor = int(exp::get_int(kv, "pad_factor", 16));
  const std::string mask = exp::get_string(kv, "phase_mask_file", "");
  if (!mask.empty()) {
    std::ifstream in(file.parent_path() / mask);
    if (!in) throw std::runtime_error("cannot open phase mask: " + mask);
    for (Eigen::Index i = 0; i < scene.pupil.phase.rows(); ++i)
      for (Eigen::Index j = 0; j < scene.pupil.phase.cols(); ++j)
        if (!(in >> scene.pupil.phase(i, j)))
          throw std::runtime_error("phase mask too small for the pupil grid");
  }
  scene.grid.side = int(exp::get_int(kv, "grid_n", 4));
  scene.grid.pitch = exp::get_double(kv, "pixel_pitch_m");
  scene.grid.origin = exp::get_double(kv, "grid_origin_m", 0.0);
  const std::string prof = exp::get_string(kv, "pixel_profile", "flat");
  scene.grid.profile = prof == "gaussian" ? PixelProfile::kGaussian : PixelProfile::kFlatTop;
  scene.source1 = {exp::get_double(kv, "source1_xi_m"), exp::get_double(kv, "source1_nu_m"),
                   "star"};
  scene.source2 = {exp::get_double(kv, "source2_xi_m"), exp::get_double(kv, "source2_nu_m"),
                   "exoplanet"};
  scene.relative_brightness = exp::get_double(kv, "b");
  scene.vacuum_probability = exp::get_double(kv, "delta_vac", 1.0);
  scene.validate();
  return scene;
}

void dump_state_csv(const PureState& state, int side, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  out << "m,n,re,im\n";
  for (int m = 0; m < side; ++m) {
    for (int n = 0; n < side; ++n) {
      const Complex a = state.amplitudes(m * side + n);
      out << m << "," << n << "," << exp::format_double(a.real()) << ","
          << exp::format_double(a.imag()) << "\n";
    }
  }
}

}  // namespace qpsim::optics
