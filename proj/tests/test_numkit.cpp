#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qpsim/experiment.hpp"
#include "qpsim/numkit.hpp"

using namespace qpsim;
using numkit::Complex;
using numkit::Matrix;
using numkit::Vector;

namespace {

// independent elementwise Kronecker product used as the oracle
Matrix kron_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = a(i / b.rows(), j / b.cols()) * b(i % b.rows(), j % b.cols());
    }
  }
  return out;
}

}  // namespace

TEST_CASE("kron identity case") {
  const Matrix i2 = Matrix::Identity(2, 2);
  CHECK((numkit::kron(i2, i2) - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kron matches the elementwise oracle and the mixed-product rule") {
  exp::Rng rng(11);
  const Matrix a = exp::random_hermitian(3, rng) + exp::random_hermitian(3, rng) * Complex(0, 1);
  const Matrix b = exp::random_hermitian(3, rng) - exp::random_hermitian(3, rng) * Complex(0, 1);
  CHECK((numkit::kron(a, b) - kron_oracle(a, b)).cwiseAbs().maxCoeff() < 1e-14);

  const Vector u = exp::random_state(3, rng);
  const Vector v = exp::random_state(3, rng);
  const Vector lhs = numkit::kron(a, b) * numkit::kron(Matrix(u), Matrix(v)).col(0);
  const Vector rhs = numkit::kron(Matrix(a * u), Matrix(b * v)).col(0);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kron trace multiplicativity on random Hermitian factors") {
  exp::Rng rng(12);
  const Matrix a = exp::random_hermitian(4, rng);
  const Matrix b = exp::random_hermitian(4, rng);
  const Complex lhs = numkit::kron(a, b).trace();
  const Complex rhs = a.trace() * b.trace();
  CHECK(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("kron entry budget enforced") {
  const Matrix big = Matrix::Identity(64, 64);
  CHECK_THROWS_AS(numkit::kron(numkit::kron(big, big), big), std::length_error);
}

TEST_CASE("partial trace of product states returns the factors") {
  exp::Rng rng(13);
  const Matrix rho = exp::random_density(4, 2, rng).mat;
  const Matrix sigma = exp::random_density(4, 3, rng).mat;
  const Matrix joint = numkit::kron(rho, sigma);
  CHECK((numkit::partial_trace(joint, {4, 4}, 1) - sigma).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((numkit::partial_trace(joint, {4, 4}, 0) - rho).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("partial trace of the maximally entangled projector is maximally mixed") {
  Vector bell = Vector::Zero(4);
  bell(0) = 1.0 / std::sqrt(2.0);
  bell(3) = 1.0 / std::sqrt(2.0);
  const Matrix proj = bell * bell.adjoint();
  const Matrix reduced = numkit::partial_trace(proj, {2, 2}, 1);
  CHECK((reduced - 0.5 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("partial trace rejects non-factorizable dimensions") {
  const Matrix j = Matrix::Identity(6, 6);
  CHECK_THROWS_AS(numkit::partial_trace(j, {4, 2}, 0), std::invalid_argument);
}

TEST_CASE("eigh on a diagonal matrix") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 0.9;
  d(1, 1) = 0.1;
  const auto e = numkit::eigh(d);
  CHECK(e.values(0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(e.values(1) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(std::abs(e.vectors.col(0)(1)) == doctest::Approx(1.0));
}

TEST_CASE("rank-2 equal-brightness state has the closed-form spectrum") {
  // two unit vectors with overlap h: eigenvalues (1 +- h)/2 at b = 1/2
  const double h = 0.37;
  Vector psi1 = Vector::Zero(5);
  psi1(0) = 1.0;
  Vector psi2 = Vector::Zero(5);
  psi2(0) = h;
  psi2(1) = std::sqrt(1.0 - h * h);
  const Matrix rho = 0.5 * (psi1 * psi1.adjoint()) + 0.5 * (psi2 * psi2.adjoint());
  const auto e = numkit::eigh(rho);
  CHECK(e.values(4) == doctest::Approx((1.0 + h) / 2).epsilon(1e-12));
  CHECK(e.values(3) == doctest::Approx((1.0 - h) / 2).epsilon(1e-12));
}

TEST_CASE("eigh reconstruction and orthonormality at dim 16") {
  exp::Rng rng(14);
  const Matrix a = exp::random_hermitian(16, rng);
  const auto e = numkit::eigh(a);
  const Matrix rebuilt =
      e.vectors * e.values.cast<Complex>().asDiagonal() * e.vectors.adjoint();
  CHECK((rebuilt - a).cwiseAbs().maxCoeff() < 1e-10 * a.cwiseAbs().maxCoeff());
  const Matrix gram = e.vectors.adjoint() * e.vectors;
  CHECK((gram - Matrix::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index i = 1; i < 16; ++i) CHECK(e.values(i) >= e.values(i - 1));
}

TEST_CASE("eigh handles degenerate eigenspaces by projector reconstruction") {
  exp::Rng rng(15);
  // two-fold degenerate eigenvalue: projector must be reproduced even
  // though individual vectors are free
  const Matrix u = exp::random_unitary(4, rng);
  Eigen::VectorXd vals(4);
  vals << 0.1, 0.3, 0.3, 0.3;
  const Matrix a = u * vals.cast<Complex>().asDiagonal() * u.adjoint();
  const auto e = numkit::eigh(a);
  Matrix proj_true = Matrix::Zero(4, 4);
  for (int i = 1; i < 4; ++i) proj_true += u.col(i) * u.col(i).adjoint();
  Matrix proj_est = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    if (std::abs(e.values(i) - 0.3) < 1e-9) proj_est += e.vectors.col(i) * e.vectors.col(i).adjoint();
  }
  CHECK((proj_true - proj_est).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("eigh rejects non-Hermitian input") {
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 1) = 1.0;
  CHECK_THROWS_AS(numkit::eigh(bad), std::invalid_argument);
}

TEST_CASE("herm_exp basics") {
  const Matrix zero = Matrix::Zero(3, 3);
  CHECK((numkit::herm_exp(zero, 0.7) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);

  // SWAP squares to identity, so the exponential closes in cos/sin form
  Matrix s = Matrix::Zero(4, 4);
  s(0, 0) = s(3, 3) = 1.0;
  s(1, 2) = s(2, 1) = 1.0;
  const double x = 0.81;
  const Matrix expected = std::cos(x) * Matrix::Identity(4, 4) + Complex(0, std::sin(x)) * s;
  CHECK((numkit::herm_exp(s, x) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("herm_exp gives a unitary with group inverse") {
  exp::Rng rng(16);
  const Matrix h = exp::random_hermitian(6, rng);
  const Matrix u = numkit::herm_exp(h, 0.37);
  const Matrix v = numkit::herm_exp(h, -0.37);
  CHECK((u * u.adjoint() - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((u * v - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("trace distance basics and the hand-computed diagonal case") {
  exp::Rng rng(17);
  const auto rho = exp::random_density(4, 2, rng);
  CHECK(numkit::trace_distance(rho, rho) == doctest::Approx(0.0));

  Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2);
  e0(0) = 1;
  e1(1) = 1;
  CHECK(numkit::trace_distance(numkit::pure_density(e0), numkit::pure_density(e1)) ==
        doctest::Approx(1.0).epsilon(1e-12));

  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
  a(0, 0) = 0.6;
  a(1, 1) = 0.4;
  b(0, 0) = 0.5;
  b(1, 1) = 0.5;
  CHECK(numkit::trace_distance(numkit::DensityOperator{a}, numkit::DensityOperator{b}) ==
        doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("trace distance triangle inequality on random triples") {
  exp::Rng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = exp::random_density(5, 2, rng);
    const auto b = exp::random_density(5, 3, rng);
    const auto c = exp::random_density(5, 1, rng);
    const double ab = numkit::trace_distance(a, b);
    const double bc = numkit::trace_distance(b, c);
    const double ac = numkit::trace_distance(a, c);
    CHECK(ac <= ab + bc + 1e-10);
  }
}

TEST_CASE("pure fidelity basics") {
  Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2), plus(2);
  e0(0) = 1;
  e1(1) = 1;
  plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const numkit::PureState s0{e0}, s1{e1}, sp{plus};
  CHECK(numkit::fidelity_pure(s0, s0) == doctest::Approx(1.0));
  CHECK(numkit::fidelity_pure(s0, s1) == doctest::Approx(0.0));
  CHECK(numkit::fidelity_pure(sp, s0) == doctest::Approx(0.5));
}

TEST_CASE("channel built from unitary conjugation plus partial trace preserves trace") {
  exp::Rng rng(19);
  const auto rho = exp::random_density(3, 2, rng);
  const auto sigma = exp::random_density(3, 3, rng);
  const Matrix u = exp::random_unitary(9, rng);
  const Matrix joint = u * numkit::kron(rho.mat, sigma.mat) * u.adjoint();
  const Matrix out = numkit::partial_trace(joint, {3, 3}, 0);
  CHECK(std::abs(out.trace() - Complex(1.0)) < 1e-10);
}

TEST_CASE("make_density clamps roundoff negatives and rejects real ones") {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1.0 + 5e-11;
  m(1, 1) = -5e-11;
  const auto d = numkit::make_density(m);
  const auto e = numkit::eigh(d.mat);
  CHECK(e.values.minCoeff() >= 0.0);
  CHECK(std::abs(d.mat.trace() - Complex(1.0)) < 1e-12);

  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 0) = 1.01;
  bad(1, 1) = -0.01;
  CHECK_THROWS_AS(numkit::make_density(bad), std::invalid_argument);
}
