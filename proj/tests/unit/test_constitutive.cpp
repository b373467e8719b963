#include <random>

#include <gtest/gtest.h>

#include "plaquemech/constitutive.hpp"

using namespace plaquemech;

namespace {

/// Random F with det in [0.7, 1.5]: in-plane stretch/shear, F33 = 1 for the
/// plane-strain subset or a general out-of-plane part otherwise.
DeformationState random_state(std::mt19937_64& rng, bool plane_strain) {
  std::uniform_real_distribution<double> u(-0.35, 0.35);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> jd(0.7, 1.5);
  for (;;) {
    Mat3 F = Mat3::Identity();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (!plane_strain || (i < 2 && j < 2)) F(i, j) += u(rng);
    const double J = F.determinant();
    if (!(J > 0.0)) continue;
    const double target = jd(rng);
    if (plane_strain) F.topLeftCorner<2, 2>() *= std::sqrt(target / J);
    else F *= std::cbrt(target / J);
    DeformationState s;
    s.F = F;
    const double a = ang(rng);
    s.circumferential = Vec3(-std::sin(a), std::cos(a), 0.0);
    s.axial = Vec3::UnitZ();
    return s;
  }
}

/// Central differences of W with respect to F give P; sigma = P F^T / J.
Mat3 fd_cauchy(const DeformationState& s, const MaterialParams& m, double h) {
  Mat3 P;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      DeformationState p = s;
      DeformationState q = s;
      p.F(i, j) += h;
      q.F(i, j) -= h;
      P(i, j) = (strain_energy(p, m) - strain_energy(q, m)) / (2.0 * h);
    }
  return P * s.F.transpose() / s.J();
}

bool near_fiber_kink(const DeformationState& s, const MaterialParams& m) {
  if (!m.has_fibers) return false;
  for (int sign : {+1, -1})
    if (std::abs(s.I4(m.phi_deg, sign) - 1.0) < 1e-3) return true;
  return false;
}

}  // namespace

TEST(Constitutive, MaterialTableMatchesTabulatedValues) {
  const auto t = MaterialTable::defaults();
  EXPECT_EQ(t[Tissue::Adventitia], (MaterialParams{0.016, 0.45, 5.1, 15.4, 56.3, true}));
  EXPECT_EQ(t[Tissue::Media], (MaterialParams{0.16, 0.45, 0.64, 3.54, 5.76, true}));
  EXPECT_EQ(t[Tissue::NormalIntima].E_mpa, 0.16);
  EXPECT_EQ(t[Tissue::LipidRich].E_mpa, 0.08);
  EXPECT_EQ(t[Tissue::Fibrotic].E_mpa, 0.16);
  EXPECT_EQ(t[Tissue::Calcification].E_mpa, 1.6);
  for (auto c : kAllComponents) {
    EXPECT_EQ(t[to_tissue(c)].nu, 0.45);
    EXPECT_FALSE(t[to_tissue(c)].has_fibers);
  }
}

TEST(Constitutive, ReferenceStateIsStressFree) {
  for (auto tissue : kAllTissues) {
    DeformationState s;
    const auto& m = material_of(tissue);
    EXPECT_EQ(strain_energy(s, m), 0.0);
    EXPECT_EQ(cauchy_stress(s, m), Mat3::Zero());
  }
}

TEST(Constitutive, HandEvaluatedEnergies) {
  auto media = material_of(Tissue::Media);
  media.has_fibers = false;
  DeformationState shear;
  shear.F(0, 1) = 0.1;
  EXPECT_NEAR(strain_energy(shear, media), 0.5 * media.mu_kpa() * 0.01, 1e-12);
  EXPECT_NEAR(0.5 * media.mu_kpa() * 0.01, 0.2759, 1e-4);

  // circumferential stretch along a fiber at phi = 0
  auto adv = material_of(Tissue::Adventitia);
  adv.phi_deg = 0.0;
  auto adv_iso = adv;
  adv_iso.has_fibers = false;
  DeformationState s;
  s.circumferential = Vec3::UnitY();
  s.F(1, 1) = 1.1;
  const double fiber = strain_energy(s, adv) - strain_energy(s, adv_iso);
  const double one_family = 5.1 / (2.0 * 15.4) * (std::exp(15.4 * 0.21 * 0.21) - 1.0);
  EXPECT_NEAR(one_family, 0.1610, 1e-4);
  EXPECT_NEAR(fiber, 2.0 * one_family, 1e-12);  // both families coincide at phi = 0
}

TEST(Constitutive, RotationIsEnergyFree) {
  DeformationState s;
  const double a = 0.8;
  s.F << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  for (auto tissue : kAllTissues) EXPECT_NEAR(strain_energy(s, material_of(tissue)), 0.0, 1e-12);
}

TEST(Constitutive, FiberAngleSignSymmetry) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  auto plus = material_of(Tissue::Adventitia);
  auto minus = plus;
  minus.phi_deg = -plus.phi_deg;
  for (int n = 0; n < 20; ++n) {
    DeformationState s;
    s.circumferential = Vec3::UnitY();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) s.F(i, j) += u(rng);
    EXPECT_NEAR(strain_energy(s, plus), strain_energy(s, minus), 1e-12);
  }
}

TEST(Constitutive, ModulusRatioAtSmallStrain) {
  DeformationState s;
  s.F(0, 0) = s.F(1, 1) = 1.0 + 1e-9;
  const double r = cauchy_stress(s, material_of(Tissue::Calcification))(0, 0) /
                   cauchy_stress(s, material_of(Tissue::LipidRich))(0, 0);
  EXPECT_NEAR(r, 20.0, 20.0 * 1e-6);
}

TEST(Constitutive, TangentAtIdentityIsLinearElastic) {
  const auto m = material_of(Tissue::Fibrotic);
  const Tensor4 c = spatial_tangent(DeformationState{}, m);
  const double lam = m.lambda_kpa(), mu = m.mu_kpa();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
          const double expected = lam * (i == j) * (k == l) + mu * ((i == k) * (j == l) + (i == l) * (j == k));
          EXPECT_NEAR(c(voigt9(i, j), voigt9(k, l)), expected, 1e-9 * lam);
        }
}

TEST(Constitutive, SlackFibersAddNoTangent) {
  auto m = material_of(Tissue::Media);
  auto iso = m;
  iso.has_fibers = false;
  DeformationState s;
  s.circumferential = Vec3::UnitY();
  s.F(1, 1) = 0.9;
  EXPECT_EQ(spatial_tangent(s, m), spatial_tangent(s, iso));
}

TEST(Constitutive, StressMatchesEnergyDerivative) {
  std::mt19937_64 rng(7);
  for (int n = 0; n < 1000; ++n) {
    const auto tissue = kAllTissues[static_cast<std::size_t>(n) % kNumTissues];
    const auto m = material_of(tissue);
    const auto s = random_state(rng, n % 2 == 0);
    const Mat3 sigma = cauchy_stress(s, m);
    const Mat3 fd = fd_cauchy(s, m, 1e-6);
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    ASSERT_LE((sigma - fd).cwiseAbs().maxCoeff() / scale, 1e-6) << name_of(tissue) << " sample " << n;
  }
}

TEST(Constitutive, TangentMatchesTruesdellRateOfStress) {
  // sigma(F + e L F): d sigma/de - L sigma - sigma L^T + tr(L) sigma = c : L for symmetric L
  std::mt19937_64 rng(11);
  const double h = 1e-6;
  int checked = 0;
  for (int n = 0; n < 1000; ++n) {
    const auto tissue = kAllTissues[static_cast<std::size_t>(n) % kNumTissues];
    const auto m = material_of(tissue);
    const auto s = random_state(rng, n % 2 == 1);
    if (near_fiber_kink(s, m)) continue;
    const Tensor4 c = spatial_tangent(s, m);
    const Mat3 sigma = cauchy_stress(s, m);
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    for (int k = 0; k < 3; ++k)
      for (int l = k; l < 3; ++l) {
        Mat3 L = Mat3::Zero();
        L(k, l) += 0.5;
        L(l, k) += 0.5;
        DeformationState p = s;
        DeformationState q = s;
        p.F = (Mat3::Identity() + h * L) * s.F;
        q.F = (Mat3::Identity() - h * L) * s.F;
        const Mat3 rate = (cauchy_stress(p, m) - cauchy_stress(q, m)) / (2.0 * h) - L * sigma -
                          sigma * L.transpose() + L.trace() * sigma;
        Mat3 cL = Mat3::Zero();
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            for (int a = 0; a < 3; ++a)
              for (int b = 0; b < 3; ++b) cL(i, j) += c(voigt9(i, j), voigt9(a, b)) * L(a, b);
        ASSERT_LE((rate - cL).cwiseAbs().maxCoeff() / scale, 1e-5) << name_of(tissue) << " sample " << n;
      }
    ++checked;
  }
  EXPECT_GT(checked, 900);
}

TEST(Constitutive, TangentHasMinorAndMajorSymmetry) {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 50; ++n) {
    const auto s = random_state(rng, true);
    const Tensor4 c = spatial_tangent(s, material_of(Tissue::Adventitia));
    const double tol = 1e-12 * c.cwiseAbs().maxCoeff();
    EXPECT_LE((c - c.transpose()).cwiseAbs().maxCoeff(), tol);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k)
          for (int l = 0; l < 3; ++l)
            EXPECT_NEAR(c(voigt9(i, j), voigt9(k, l)), c(voigt9(j, i), voigt9(k, l)), tol);
  }
}

TEST(Constitutive, SmallStrainLimitRecoversLinearElasticity) {
  // uniaxial plane-strain stretch 1 + e: sigma_xx ~ (lambda + 2 mu) e
  const auto m = material_of(Tissue::Fibrotic);
  const double e = 1e-7;
  DeformationState s;
  s.F(0, 0) = 1.0 + e;
  const double expected = (m.lambda_kpa() + 2.0 * m.mu_kpa()) * e;
  EXPECT_NEAR(cauchy_stress(s, m)(0, 0), expected, 1e-6 * expected);
}

TEST(Constitutive, FibersCarryTensionOnly) {
  const auto m = material_of(Tissue::Media);
  auto iso = m;
  iso.has_fibers = false;
  DeformationState s;
  s.circumferential = Vec3::UnitY();
  s.F(1, 1) = 0.9;  // circumferential compression, I4 < 1 for both families
  EXPECT_EQ(strain_energy(s, m), strain_energy(s, iso));
  s.F(1, 1) = 1.1;
  EXPECT_GT(strain_energy(s, m), strain_energy(s, iso));
}

TEST(Constitutive, NonPositiveJacobianThrows) {
  DeformationState s;
  s.F(0, 0) = -1.0;
  try {
    (void)cauchy_stress(s, material_of(Tissue::Fibrotic));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveJacobian);
  }
}

TEST(Constitutive, MaterialValidationRejectsBadParameters) {
  MaterialParams m = material_of(Tissue::Fibrotic);
  m.nu = 0.5;
  EXPECT_THROW(m.validate("x"), Error);
  m = material_of(Tissue::Media);
  m.k2 = 0.0;
  EXPECT_THROW(m.validate("x"), Error);
}
