#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qpsim/numkit.hpp"

// Fourier-optics source model: a sampled complex pupil propagated to the
// detector plane, pixelated onto an N x N mode grid, and assembled into
// the heralded two-source mixed state with optional isotropic noise.

namespace qpsim::optics {

using numkit::Complex;
using numkit::DensityOperator;
using numkit::Matrix;
using numkit::PureState;
using numkit::Vector;

struct PupilModel {
  double wavelength = 0.0;       // meters
  double object_distance = 0.0;  // z_o
  double image_distance = 0.0;   // z_i
  Eigen::MatrixXd pupil;         // transmission samples, compact support
  Eigen::MatrixXd phase;         // radians, same grid
  double pitch = 0.0;            // pupil-plane sample spacing
  int pad_factor = 16;

  Eigen::Index samples() const { return pupil.rows(); }
  double wavenumber() const { return 2.0 * 3.14159265358979323846 / wavelength; }
  void validate() const;
};

// Uniform disc pupil with zero phase, window sized so the support keeps a
// clear boundary ring.
PupilModel make_circular_pupil(double radius, int samples, double wavelength,
                               double z_o, double z_i);

struct PointSource {
  double xi = 0.0;  // object-plane coordinates, meters
  double nu = 0.0;
  std::string label;
};

enum class PixelProfile { kFlatTop, kGaussian };

struct PixelGrid {
  int side = 0;            // N
  double pitch = 0.0;      // meters
  double origin = 0.0;     // offset of the grid center from the axis
  PixelProfile profile = PixelProfile::kFlatTop;

  // pixel (m, n) center coordinates
  double center_u(int m) const;
  double center_v(int n) const;
  // mode profile value at an in-pixel offset; normalized so the squared
  // integral over one pixel is 1
  double profile_value(double du, double dv) const;
};

struct Scene {
  PointSource source1;  // star
  PointSource source2;  // exoplanet
  double relative_brightness = 0.0;  // b
  double vacuum_probability = 1.0;   // delta_vac; affects rate reporting only
  PupilModel pupil;
  PixelGrid grid;

  void validate() const;
};

struct NoiseModel {
  double gamma = 0.0;
  void validate() const;
};

// Complex detector-plane amplitude H(u, v, xi, nu) per source point,
// evaluated by an FFT of the padded complex pupil plus the analytic
// quadratic phase prefactors. Throws when the requested detector window
// would alias (reports the needed sampling).
std::vector<Complex> psf_field(const PupilModel& pupil, const PointSource& source,
                               const std::vector<std::pair<double, double>>& detector_points);

// Sampled-field functional form used by pixelate.
using FieldFn = std::function<Complex(double, double)>;
FieldFn psf_field_fn(const PupilModel& pupil, const PointSource& source);

// The same kernel rescaled to unit energy over the detector plane, which
// makes the pixelation sums genuine detection efficiencies.
FieldFn normalized_field_fn(const PupilModel& pupil, const PointSource& source);

struct PixelateOptions {
  int quadrature_order = 8;  // 16 for oracle cross-checks
  double eta_floor = 1e-6;
};

// Projects a field onto the pixel modes (per-pixel Gauss-Legendre
// quadrature); returns the normalized state with norm_deficit = 1 - eta.
PureState pixelate(const FieldFn& field, const PixelGrid& grid,
                   const PixelateOptions& opts = {});

// Oracle ground truth retained for tests only; estimation code paths
// never see it.
struct SceneTruth {
  Vector psi1;
  Vector psi2;
  double overlap_h = 0.0;  // <psi1|psi2> after the phase convention
  double eta1 = 0.0, eta2 = 0.0;
  double top_eigenvalue = 0.0;  // r
};

struct HeraldedState {
  DensityOperator rho;
  SceneTruth truth;
};

HeraldedState build_rho(const Scene& scene, const PixelateOptions& opts = {});

DensityOperator apply_noise(const DensityOperator& rho, const NoiseModel& noise);

// Scene description file (line-oriented key=value; see README for keys).
Scene load_scene(const std::filesystem::path& file);
void dump_state_csv(const PureState& state, int side, const std::filesystem::path& file);

}  // namespace qpsim::optics
