#pragma once

// Compressible Neo-Hookean matrix with two exponential, tension-only fiber
// families lying in the circumferential-axial plane at +/-phi from the
// circumferential direction.
//
//   W = mu/2 (I1 - 3) - mu ln J + lambda/2 (ln J)^2
//     + sum_{+/-} k1/(2 k2) [exp(k2 (I4 - 1)^2) - 1]      (only where I4 > 1)
//
// Units: moduli are stored as tabulated (E in MPa, k1 in kPa); every function
// here returns energy densities and stresses in kPa.

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "plaquemech/error.hpp"
#include "plaquemech/tissue.hpp"

namespace plaquemech {

struct MaterialParams {
  double E_mpa = 0.0;
  double nu = 0.0;
  double k1_kpa = 0.0;
  double k2 = 0.0;
  double phi_deg = 0.0;
  bool has_fibers = false;

  double mu_kpa() const { return 1000.0 * E_mpa / (2.0 * (1.0 + nu)); }
  double lambda_kpa() const { return 1000.0 * E_mpa * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }

  void validate(std::string_view what) const {
    auto fail = [&](const char* msg) {
      throw Error(ErrorCode::InvariantViolation, std::string(what) + ": " + msg);
    };
    if (!(E_mpa > 0.0)) fail("E must be positive");
    if (!(nu > 0.0 && nu < 0.5)) fail("nu must lie in (0, 0.5)");
    if (has_fibers) {
      if (!(k1_kpa > 0.0)) fail("k1 must be positive");
      if (!(k2 > 0.0)) fail("k2 must be positive");
      if (!(phi_deg >= 0.0 && phi_deg < 90.0)) fail("phi must lie in [0, 90)");
    }
  }

  bool operator==(const MaterialParams&) const = default;
};

/// Tabulated artery parameters (layer-specific, plaque classes isotropic).
inline MaterialParams material_of(Tissue tissue) {
  switch (tissue) {
    case Tissue::Adventitia: return {0.016, 0.45, 5.1, 15.4, 56.3, true};
    case Tissue::Media: return {0.16, 0.45, 0.64, 3.54, 5.76, true};
    case Tissue::NormalIntima: return {0.16, 0.45};
    case Tissue::LipidRich: return {0.08, 0.45};
    case Tissue::Fibrotic: return {0.16, 0.45};
    case Tissue::Calcification: return {1.6, 0.45};
  }
  return {};
}

inline MaterialParams material_of(PlaqueComponent c) { return material_of(to_tissue(c)); }

/// Per-tissue parameter set; starts from the tabulated values and may be
/// overridden from config.
struct MaterialTable {
  std::array<MaterialParams, kNumTissues> params{};

  static MaterialTable defaults() {
    MaterialTable t;
    for (auto tissue : kAllTissues) t.params[index_of(tissue)] = material_of(tissue);
    return t;
  }

  const MaterialParams& operator[](Tissue t) const { return params[index_of(t)]; }
  MaterialParams& operator[](Tissue t) { return params[index_of(t)]; }
};

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Fourth-order tensor stored as a 9x9 matrix, row (i,j) = 3i+j, col (k,l) = 3k+l.
using Tensor4 = Eigen::Matrix<double, 9, 9>;

inline constexpr int voigt9(int i, int j) { return 3 * i + j; }

/// Deformation gradient together with the local fiber frame.
struct DeformationState {
  Mat3 F = Mat3::Identity();
  Vec3 circumferential = Vec3::UnitY();
  Vec3 axial = Vec3::UnitZ();

  /// Embeds an in-plane gradient: F33 = 1, no out-of-plane shear. The
  /// circumferential direction is the in-plane unit tangent at the point.
  static DeformationState plane_strain(const Eigen::Matrix2d& F2, const Eigen::Vector2d& circ) {
    DeformationState s;
    s.F.setIdentity();
    s.F.topLeftCorner<2, 2>() = F2;
    s.circumferential = Vec3(circ.x(), circ.y(), 0.0).normalized();
    s.axial = Vec3::UnitZ();
    return s;
  }

  double J() const { return F.determinant(); }
  Mat3 C() const { return F.transpose() * F; }
  Mat3 B() const { return F * F.transpose(); }
  double I1() const { return C().trace(); }

  /// Reference fiber direction of family `sign` (+1 or -1).
  Vec3 fiber_reference(double phi_deg, int sign) const {
    const double phi = phi_deg * M_PI / 180.0;
    return std::cos(phi) * circumferential + static_cast<double>(sign) * std::sin(phi) * axial;
  }

  double I4(double phi_deg, int sign) const {
    const Vec3 a = F * fiber_reference(phi_deg, sign);
    return a.squaredNorm();
  }
};

namespace detail {

inline double checked_jacobian(const DeformationState& s) {
  const double J = s.J();
  if (!(J > 0.0)) throw Error(ErrorCode::NonPositiveJacobian, "J = " + std::to_string(J));
  return J;
}

struct FiberTerms {
  double dW = 0.0;   // dW/dI4
  double d2W = 0.0;  // d2W/dI4^2
  double W = 0.0;
};

inline FiberTerms fiber_terms(const MaterialParams& m, double I4) {
  FiberTerms t;
  if (!(I4 > 1.0)) return t;
  const double e = I4 - 1.0;
  const double ex = std::exp(m.k2 * e * e);
  t.W = m.k1_kpa / (2.0 * m.k2) * (ex - 1.0);
  t.dW = m.k1_kpa * e * ex;
  t.d2W = m.k1_kpa * ex * (1.0 + 2.0 * m.k2 * e * e);
  return t;
}

}  // namespace detail

// The energy splits additively into a stretch part (I1 and fiber terms) and
// a Jacobian part U(J) = -mu ln J + lambda/2 (ln J)^2. The element integrates
// the two parts with different quadrature, so each is exposed separately.

/// mu/2 (I1 - 3) plus the active fiber energies, kPa.
inline double stretch_energy(const DeformationState& s, const MaterialParams& m) {
  detail::checked_jacobian(s);
  double W = 0.5 * m.mu_kpa() * (s.I1() - 3.0);
  if (m.has_fibers) {
    for (int sign : {+1, -1}) W += detail::fiber_terms(m, s.I4(m.phi_deg, sign)).W;
  }
  return W;
}

/// U(J), kPa.
inline double jacobian_energy(double J, const MaterialParams& m) {
  if (!(J > 0.0)) throw Error(ErrorCode::NonPositiveJacobian, "J = " + std::to_string(J));
  const double lnJ = std::log(J);
  return -m.mu_kpa() * lnJ + 0.5 * m.lambda_kpa() * lnJ * lnJ;
}

/// U'(J): the Jacobian part contributes U'(J) * I to the Cauchy stress.
inline double jacobian_pressure(double J, const MaterialParams& m) {
  if (!(J > 0.0)) throw Error(ErrorCode::NonPositiveJacobian, "J = " + std::to_string(J));
  return (-m.mu_kpa() + m.lambda_kpa() * std::log(J)) / J;
}

/// Cauchy stress of the stretch part: mu/J B + sum 2/J psi'(I4) a (x) a.
inline Mat3 stretch_stress(const DeformationState& s, const MaterialParams& m) {
  const double J = detail::checked_jacobian(s);
  Mat3 sigma = (m.mu_kpa() / J) * s.B();
  if (m.has_fibers) {
    for (int sign : {+1, -1}) {
      const Vec3 a = s.F * s.fiber_reference(m.phi_deg, sign);
      const auto t = detail::fiber_terms(m, a.squaredNorm());
      if (t.dW != 0.0) sigma += (2.0 * t.dW / J) * (a * a.transpose());
    }
  }
  return 0.5 * (sigma + sigma.transpose());
}

/// Spatial tangent of the stretch part. The I1 term is linear in C, so only
/// the fibers contribute: 4/J psi''(I4) a (x) a (x) a (x) a.
inline Tensor4 stretch_tangent(const DeformationState& s, const MaterialParams& m) {
  const double J = detail::checked_jacobian(s);
  Tensor4 c = Tensor4::Zero();
  if (!m.has_fibers) return c;
  for (int sign : {+1, -1}) {
    const Vec3 a = s.F * s.fiber_reference(m.phi_deg, sign);
    const auto t = detail::fiber_terms(m, a.squaredNorm());
    if (t.d2W == 0.0) continue;
    const double scale = 4.0 * t.d2W / J;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k)
          for (int l = 0; l < 3; ++l) c(voigt9(i, j), voigt9(k, l)) += scale * a(i) * a(j) * a(k) * a(l);
  }
  return c;
}

/// Spatial tangent of the Jacobian part: (p + J p') I (x) I - 2 p II, with
/// p = U'(J) and II the symmetric fourth-order identity.
inline Tensor4 jacobian_tangent(double J, const MaterialParams& m) {
  const double p = jacobian_pressure(J, m);
  const double a = m.lambda_kpa() / J;  // p + J p' for this U
  Tensor4 c = Tensor4::Zero();
  auto delta = [](int x, int y) { return x == y ? 1.0 : 0.0; };
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l)
          c(voigt9(i, j), voigt9(k, l)) =
              a * delta(i, j) * delta(k, l) - p * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k));
  return c;
}

/// Strain energy density in kPa.
inline double strain_energy(const DeformationState& s, const MaterialParams& m) {
  return stretch_energy(s, m) + jacobian_energy(s.J(), m);
}

/// Cauchy stress in kPa.
inline Mat3 cauchy_stress(const DeformationState& s, const MaterialParams& m) {
  return stretch_stress(s, m) + jacobian_pressure(s.J(), m) * Mat3::Identity();
}

/// Spatial elasticity tensor c (the Truesdell-rate tangent of the Cauchy
/// stress): sigma_truesdell = c : d. Minor and major symmetric. For the
/// isotropic part this is lambda/J I (x) I + 2 (mu - lambda ln J)/J II.
inline Tensor4 spatial_tangent(const DeformationState& s, const MaterialParams& m) {
  return stretch_tangent(s, m) + jacobian_tangent(detail::checked_jacobian(s), m);
}

}  // namespace plaquemech
