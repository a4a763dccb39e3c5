#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <fstream>

#include "qpsim/optics.hpp"
#include "qpsim/experiment.hpp"

using namespace qpsim;
using numkit::Complex;
using numkit::Matrix;
using numkit::Vector;

namespace {

optics::PupilModel test_pupil(int samples = 64) {
  return optics::make_circular_pupil(0.05, samples, 1e-6, 1e8, 1.0);
}

optics::PixelGrid test_grid(int n = 4, double pitch = 1.2e-5) {
  optics::PixelGrid g;
  g.side = n;
  g.pitch = pitch;
  return g;
}

}  // namespace

TEST_CASE("on-axis circular pupil: dihedral symmetry and Airy profile") {
  const auto pupil = test_pupil();
  const optics::PointSource on_axis{0.0, 0.0, "star"};
  const double rho = 0.8e-5;
  const double c = rho * M_SQRT1_2;
  // equal-radius points related by the square symmetries
  std::vector<std::pair<double, double>> pts = {
      {rho, 0.0}, {-rho, 0.0}, {0.0, rho}, {0.0, -rho}, {c, c}, {-c, c}, {c, -c}, {-c, -c}};
  pts.push_back({0.0, 0.0});
  const auto field = optics::psf_field(pupil, on_axis, pts);
  const double peak = std::abs(field.back());
  // exact square symmetries of the sampled pupil hold to full precision
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(std::abs(std::abs(field[i]) - std::abs(field[0])) < 1e-6 * peak);
  }
  for (std::size_t i = 5; i < 8; ++i) {
    CHECK(std::abs(std::abs(field[i]) - std::abs(field[4])) < 1e-6 * peak);
  }
  // full rotational symmetry is limited by the pupil discretization
  CHECK(std::abs(std::abs(field[4]) - std::abs(field[0])) < 2e-3 * peak);

  // radial profile proportional to the Airy kernel 2 J1(v)/v
  const double a = 0.05;
  const double k = 2.0 * M_PI / 1e-6;
  auto airy = [&](double r) {
    const double v = k * a * r / 1.0;
    return v == 0.0 ? 1.0 : 2.0 * std::cyl_bessel_j(1, v) / v;
  };
  std::vector<std::pair<double, double>> radial;
  for (int i = 0; i <= 8; ++i) radial.push_back({i * 0.25e-5, 0.0});
  const auto prof = optics::psf_field(pupil, on_axis, radial);
  const double scale = std::abs(prof[0]);
  for (std::size_t i = 1; i < radial.size(); ++i) {
    CHECK(std::abs(prof[i]) / scale ==
          doctest::Approx(std::abs(airy(radial[i].first))).epsilon(0.08));
  }
}

TEST_CASE("shifting the source shifts the image by -z_i xi / z_o") {
  const auto pupil = test_pupil();
  const double xi0 = 1.5e3;  // image shift -1.5e-5 m
  const double shift = -pupil.image_distance * xi0 / pupil.object_distance;
  const optics::PointSource moved{xi0, 0.0, "exoplanet"};
  const optics::PointSource on_axis{0.0, 0.0, "star"};

  // sample |H| along u and locate the peak for both sources
  const double du = 0.5e-5;
  std::vector<std::pair<double, double>> pts;
  for (int i = -8; i <= 8; ++i) pts.push_back({i * du, 0.0});
  const auto f0 = optics::psf_field(pupil, on_axis, pts);
  const auto f1 = optics::psf_field(pupil, moved, pts);
  std::size_t p0 = 0, p1 = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (std::abs(f0[i]) > std::abs(f0[p0])) p0 = i;
    if (std::abs(f1[i]) > std::abs(f1[p1])) p1 = i;
  }
  const double measured = pts[p1].first - pts[p0].first;
  CHECK(std::abs(measured - shift) <= du + 1e-12);
}

TEST_CASE("psf_field is linear in the pupil transmission") {
  auto pupil = test_pupil(32);
  const optics::PointSource src{0.0, 0.0, "star"};
  std::vector<std::pair<double, double>> pts = {{0.0, 0.0}, {0.7e-5, -0.4e-5}};
  const auto base = optics::psf_field(pupil, src, pts);
  pupil.pupil *= 2.0;
  const auto doubled = optics::psf_field(pupil, src, pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(std::abs(doubled[i] - 2.0 * base[i]) < 1e-12 * std::abs(base[i]) + 1e-30);
  }
}

TEST_CASE("nyquist violation reports the required sampling") {
  const auto pupil = test_pupil(8);  // very coarse
  const optics::PointSource src{0.0, 0.0, "star"};
  std::vector<std::pair<double, double>> far = {{0.5, 0.0}};  // 0.5 m off axis
  CHECK_THROWS_WITH_AS(optics::psf_field(pupil, src, far), doctest::Contains("Nyquist"),
                       std::invalid_argument);
}

TEST_CASE("pixelate maps the matching flat-top mode to a basis state") {
  const auto grid = test_grid(3);
  const double cu = grid.center_u(0);
  const double cv = grid.center_v(0);
  const double h = grid.pitch / 2;
  optics::FieldFn field = [&](double u, double v) -> Complex {
    if (std::abs(u - cu) <= h && std::abs(v - cv) <= h) return Complex(1.0 / grid.pitch);
    return Complex(0.0);
  };
  const auto state = optics::pixelate(field, grid);
  CHECK(state.norm_deficit == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(std::abs(state.amplitudes(0)) == doctest::Approx(1.0).epsilon(1e-10));
  for (Eigen::Index i = 1; i < state.amplitudes.size(); ++i) {
    CHECK(std::abs(state.amplitudes(i)) < 1e-12);
  }
}

TEST_CASE("plane-wave capture fraction grows with the grid side") {
  // normalized plane wave over a W x W window; eta must track the area
  // fraction (with the tilt's mode-mismatch factor)
  const double w = 2.0e-4;
  const double kx = 2.0e4;  // gentle tilt
  optics::FieldFn field = [&](double u, double v) -> Complex {
    (void)v;
    return std::polar(1.0 / w, kx * u);
  };
  double last = 0.0;
  for (int n : {2, 4, 8}) {
    const auto grid = test_grid(n, 1.0e-5);
    const auto state = optics::pixelate(field, grid);
    const double eta = 1.0 - state.norm_deficit;
    const double sc = std::sin(kx * grid.pitch / 2) / (kx * grid.pitch / 2);
    const double expect = std::pow(double(n) * grid.pitch / w, 2) * sc * sc;
    CHECK(eta == doctest::Approx(expect).epsilon(1e-6));
    CHECK(eta > last);
    CHECK(eta <= 1.0);
    last = eta;
  }
}

TEST_CASE("quadrature refinement moves amplitudes by less than 1e-6") {
  const auto pupil = test_pupil();
  const optics::PointSource src{6.0e2, -4.0e2, "exoplanet"};
  const auto field = optics::normalized_field_fn(pupil, src);
  const auto grid = test_grid(4);
  optics::PixelateOptions coarse;
  optics::PixelateOptions fine;
  fine.quadrature_order = 16;
  const auto s8 = optics::pixelate(field, grid, coarse);
  const auto s16 = optics::pixelate(field, grid, fine);
  CHECK((s8.amplitudes - s16.amplitudes).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mirror-symmetric sources give index-reflected states") {
  const auto pupil = test_pupil();
  const auto grid = test_grid(4);
  const double xi = 8.0e2;
  const auto sp = optics::pixelate(optics::normalized_field_fn(pupil, {xi, xi, "a"}), grid);
  const auto sm = optics::pixelate(optics::normalized_field_fn(pupil, {-xi, -xi, "b"}), grid);
  const int n = grid.side;
  for (int m = 0; m < n; ++m) {
    for (int q = 0; q < n; ++q) {
      const Complex a = sp.amplitudes(m * n + q);
      const Complex b = sm.amplitudes((n - 1 - m) * n + (n - 1 - q));
      CHECK(std::abs(std::abs(a) - std::abs(b)) < 1e-8);
    }
  }
}

TEST_CASE("pixelate flags a source that misses the detector") {
  optics::FieldFn nothing = [](double, double) { return Complex(1e-9); };
  const auto grid = test_grid(2);
  CHECK_THROWS_WITH_AS(optics::pixelate(nothing, grid), doctest::Contains("missed"),
                       std::runtime_error);
}

TEST_CASE("pixel mode profiles are normalized over one pixel") {
  for (auto profile : {optics::PixelProfile::kFlatTop, optics::PixelProfile::kGaussian}) {
    auto grid = test_grid(2);
    grid.profile = profile;
    // order-16 tensor quadrature of |phi|^2 over one pixel
    using G = boost::math::quadrature::gauss<double, 16>;
    const double h = grid.pitch / 2;
    double acc = 0.0;
    for (std::size_t a = 0; a < G::abscissa().size(); ++a) {
      for (double sx : {-1.0, 1.0}) {
        for (std::size_t b = 0; b < G::abscissa().size(); ++b) {
          for (double sy : {-1.0, 1.0}) {
            const double du = sx * G::abscissa()[a] * h;
            const double dv = sy * G::abscissa()[b] * h;
            const double p = grid.profile_value(du, dv);
            acc += G::weights()[a] * G::weights()[b] * p * p;
          }
        }
      }
    }
    acc *= h * h;
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-8));
  }
}

namespace {

optics::Scene test_scene(double b, double xi2 = 1.2e3) {
  optics::Scene scene;
  scene.pupil = test_pupil();
  scene.grid = test_grid(4);
  scene.source1 = {0.0, 0.0, "star"};
  scene.source2 = {xi2, 0.0, "exoplanet"};
  scene.relative_brightness = b;
  scene.vacuum_probability = 0.5;
  return scene;
}

}  // namespace

TEST_CASE("build_rho at b = 1 is pure") {
  const auto h = optics::build_rho(test_scene(1.0));
  const auto e = numkit::eigh(h.rho.mat);
  CHECK(e.values(e.values.size() - 1) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(h.truth.top_eigenvalue == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("build_rho spectrum matches the closed form at b = 1/2") {
  const auto h = optics::build_rho(test_scene(0.5));
  const double ov = h.truth.overlap_h;
  CHECK(ov >= 0.0);
  CHECK(ov < 1.0);
  const auto e = numkit::eigh(h.rho.mat);
  const Eigen::Index n = e.values.size();
  CHECK(e.values(n - 1) == doctest::Approx((1.0 + ov) / 2).epsilon(1e-10));
  CHECK(e.values(n - 2) == doctest::Approx((1.0 - ov) / 2).epsilon(1e-10));
  // rank 2: third eigenvalue negligible
  CHECK(std::abs(e.values(n - 3)) < 1e-10);
  CHECK(std::abs(h.rho.mat.trace() - Complex(1.0)) < 1e-10);

  // the phase convention leaves a real nonnegative mutual overlap
  const Complex mutual = h.truth.psi1.dot(h.truth.psi2);
  CHECK(std::abs(mutual.imag()) < 1e-12);
  CHECK(mutual.real() >= 0.0);
}

TEST_CASE("orthogonal sources give eigenvalues b, 1-b") {
  // disjoint-support fields pixelate to exactly orthogonal states; the
  // heralded mixture then has the brightness weights as its spectrum
  const auto grid = test_grid(4);
  auto boxcar = [&](int pm, int pn) {
    const double cu = grid.center_u(pm);
    const double cv = grid.center_v(pn);
    const double h = grid.pitch / 2;
    return optics::FieldFn([=](double u, double v) -> Complex {
      if (std::abs(u - cu) <= h && std::abs(v - cv) <= h) return Complex(1.0 / grid.pitch);
      return Complex(0.0);
    });
  };
  const auto s1 = optics::pixelate(boxcar(0, 0), grid);
  const auto s2 = optics::pixelate(boxcar(3, 3), grid);
  const double b = 0.7;
  const Matrix rho = b * (s1.amplitudes * s1.amplitudes.adjoint()) +
                     (1.0 - b) * (s2.amplitudes * s2.amplitudes.adjoint());
  CHECK(std::abs(s1.amplitudes.dot(s2.amplitudes)) < 1e-8);
  const auto e = numkit::eigh(rho);
  const Eigen::Index n = e.values.size();
  CHECK(e.values(n - 1) == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(e.values(n - 2) == doctest::Approx(0.3).epsilon(1e-6));
  const auto proj1 = e.vectors.col(n - 1);
  CHECK(std::norm(proj1.dot(s1.amplitudes)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("apply_noise shifts the spectrum exactly") {
  const auto h = optics::build_rho(test_scene(10.0 / 11.0));
  const auto e0 = numkit::eigh(h.rho.mat);
  const double r = e0.values(e0.values.size() - 1);

  CHECK(numkit::trace_distance(optics::apply_noise(h.rho, {0.0}), h.rho) < 1e-12);

  const auto mixed = optics::apply_noise(h.rho, {1.0});
  CHECK((mixed.mat - Matrix::Identity(16, 16) / 16.0).cwiseAbs().maxCoeff() < 1e-12);

  const double gamma = 1e-3;
  const auto noisy = optics::apply_noise(h.rho, {gamma});
  const auto e1 = numkit::eigh(noisy.mat);
  const double expect = (1.0 - gamma) * r + gamma / 16.0;
  CHECK(e1.values(15) == doctest::Approx(expect).epsilon(1e-12));

  // isotropic shift preserves eigenvectors
  const Vector top0 = e0.vectors.col(15);
  const Vector top1 = e1.vectors.col(15);
  CHECK(std::norm(top0.dot(top1)) >= 1.0 - 1e-10);
}

TEST_CASE("synthetic r = 0.9 noisy top eigenvalue hits 0.8991625") {
  // direct arithmetic cross-check of the eigenvalue shift at N = 4
  exp::Rng rng(61);
  Vector v1 = exp::random_state(16, rng);
  Vector v2 = exp::random_state(16, rng);
  v2 -= v1 * v1.dot(v2);
  v2 /= v2.norm();
  const Matrix rho = 0.9 * (v1 * v1.adjoint()) + 0.1 * (v2 * v2.adjoint());
  const auto noisy = optics::apply_noise(numkit::make_density(rho), {1e-3});
  const auto e = numkit::eigh(noisy.mat);
  CHECK(e.values(15) == doctest::Approx(0.8991625).epsilon(1e-12));
}

TEST_CASE("scene file loads and rejects unknown keys") {
  const auto dir = std::filesystem::temp_directory_path() / "qpsim_scene_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "scene.txt";
  {
    std::ofstream out(path);
    out << "lambda_m = 1e-6\nz_o_m = 1e8\nz_i_m = 1.0\npupil_radius_m = 0.05\n";
    out << "pupil_samples = 64\ngrid_n = 4\npixel_pitch_m = 1.2e-5\n";
    out << "source1_xi_m = 0\nsource1_nu_m = 0\nsource2_xi_m = 1.2e3\nsource2_nu_m = 0\n";
    out << "b = 0.909090909090909\ndelta_vac = 0.5\n";
  }
  const auto scene = optics::load_scene(path);
  CHECK(scene.grid.side == 4);
  CHECK(scene.relative_brightness == doctest::Approx(10.0 / 11.0));
  const auto h = optics::build_rho(scene);
  CHECK(h.truth.eta1 > 0.0);
  CHECK(h.truth.eta1 <= 1.0);

  {
    std::ofstream out(path, std::ios::app);
    out << "pupil_radius = 0.05\n";  // misspelled key
  }
  CHECK_THROWS_WITH_AS(optics::load_scene(path), doctest::Contains("unknown keys"),
                       std::invalid_argument);
}

TEST_CASE("state dump lists pixel amplitudes") {
  const auto h = optics::build_rho(test_scene(0.5));
  const auto dir = std::filesystem::temp_directory_path() / "qpsim_scene_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "state.csv";
  optics::dump_state_csv(numkit::PureState{h.truth.psi1}, 4, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "m,n,re,im");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 16);
}
