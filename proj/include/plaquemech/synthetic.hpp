#pragma once

// Synthetic lesion generator: a straight vessel along z with smoothly varying
// plaque morphology, CT-like HU noise and diameter profiles. Used by tests,
// the acceptance suite and the `synth-case` subcommand.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "plaquemech/case_io.hpp"
#include "plaquemech/geometry.hpp"
#include "plaquemech/tissue.hpp"

namespace plaquemech::synth {

struct CaseSpec {
  int n_slices = 20;
  double slice_step = 1.0;    // mm between centerline samples
  double spacing = 0.4;       // isotropic voxel size, mm
  double lumen_radius = 1.5;  // mm
  double intima_mean = 0.6;   // mm
  int contour_points = 64;
  int stent_begin = 2;        // first in-stent slice
  int stent_end = 17;         // last in-stent slice
  double stent_expansion = 1.1;
  std::vector<int> missing_followup{11};
  std::uint64_t seed = 1;
  // component HU means and standard deviations, ascending classes
  std::array<double, 4> hu_mean{20.0, 90.0, 180.0, 500.0};
  std::array<double, 4> hu_sigma{10.0, 20.0, 25.0, 40.0};
};

/// Morphology at arclength s.
struct SliceMorphology {
  double lumen_radius = 1.5;
  double eccentricity = 0.0;
  double orientation_deg = 0.0;  // thickest intima
  double calc_arc_deg = 0.0;     // centered on the orientation
  double lipid_arc_deg = 0.0;    // centered 120 degrees from the orientation

  double thickness(double intima_mean, double angle_deg) const {
    return intima_mean * (1.0 + eccentricity * std::cos((angle_deg - orientation_deg) * M_PI / 180.0));
  }
};

inline SliceMorphology morphology_at(const CaseSpec& spec, double s) {
  const double length = std::max(spec.slice_step * (spec.n_slices - 1), 1e-9);
  const double t = std::clamp(s / length, 0.0, 1.0);
  SliceMorphology m;
  m.lumen_radius = spec.lumen_radius * (1.0 - 0.08 * std::sin(M_PI * t));
  m.eccentricity = 0.1 + 0.4 * (0.5 + 0.5 * std::sin(2.0 * M_PI * 1.3 * t));
  m.orientation_deg = 30.0 + 90.0 * t;
  m.calc_arc_deg = std::max(0.0, 300.0 * std::sin(M_PI * t) - 60.0);
  m.lipid_arc_deg = 90.0 * (1.0 - m.calc_arc_deg / 240.0);
  return m;
}

/// Ground-truth class of an intima point at (angle, local thickness).
inline PlaqueComponent tissue_at(const CaseSpec& spec, const SliceMorphology& m, double angle_deg) {
  if (m.calc_arc_deg > 0.0 && detail::in_arc(angle_deg, m.orientation_deg, m.calc_arc_deg))
    return PlaqueComponent::Calcification;
  if (m.lipid_arc_deg > 0.0 && detail::in_arc(angle_deg, m.orientation_deg + 120.0, m.lipid_arc_deg))
    return PlaqueComponent::LipidRich;
  if (m.thickness(spec.intima_mean, angle_deg) < 0.75 * spec.intima_mean) return PlaqueComponent::NormalIntima;
  return PlaqueComponent::Fibrotic;
}

/// Restenosis grows with the calcified arc, plus noise.
inline double restenosis_truth(const SliceMorphology& m, double noise) {
  return std::clamp(8.0 + 35.0 * m.calc_arc_deg / 240.0 + noise, 0.0, 90.0);
}

struct GeneratedCase {
  CaseBundle bundle;
  std::vector<PlaqueComponent> truth;  // per masked voxel, flat voxel order
};

inline GeneratedCase generate(const CaseSpec& spec) {
  if (spec.n_slices < 1 || !(spec.spacing > 0.0) || !(spec.slice_step > 0.0))
    throw Error(ErrorCode::PreconditionViolation, "invalid synthetic case spec");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  GeneratedCase out;
  CaseBundle& b = out.bundle;

  const double half = spec.lumen_radius + spec.intima_mean * 1.5 + 1.0;
  const int nxy = static_cast<int>(std::ceil(2.0 * half / spec.spacing)) + 1;
  const double z_len = spec.slice_step * (spec.n_slices - 1);
  const double z_margin = 2.0 * spec.spacing;
  const int nz = static_cast<int>(std::ceil((z_len + 2.0 * z_margin) / spec.spacing)) + 1;
  b.volume.dims = {nxy, nxy, nz};
  b.volume.spacing = {spec.spacing, spec.spacing, spec.spacing};
  // z planes sit a quarter voxel off the slice grid so that no slice plane
  // falls exactly between two voxel planes
  b.volume.origin = {-0.5 * (nxy - 1) * spec.spacing, -0.5 * (nxy - 1) * spec.spacing,
                     0.25 * spec.spacing - z_margin};
  b.volume.values.resize(b.volume.size());
  b.mask.dims = b.volume.dims;
  b.mask.flags.assign(b.volume.size(), 0);

  auto hu = [](double v) {
    return static_cast<std::int16_t>(std::clamp(std::lround(v), -32768L, 32767L));
  };
  for (std::size_t i = 0; i < b.volume.size(); ++i) {
    const Vec3d p = b.volume.voxel_center(i);
    const auto m = morphology_at(spec, p.z());
    const double rho = std::hypot(p.x(), p.y());
    double angle = std::atan2(p.y(), p.x()) * 180.0 / M_PI;
    if (angle < 0.0) angle += 360.0;
    const double r_out = m.lumen_radius + m.thickness(spec.intima_mean, angle);
    if (rho < m.lumen_radius) {
      b.volume.values[i] = hu(300.0 + 25.0 * unit(rng));
    } else if (rho < r_out) {
      const auto c = tissue_at(spec, m, angle);
      const auto k = index_of(c);
      b.volume.values[i] = hu(spec.hu_mean[k] + spec.hu_sigma[k] * unit(rng));
      b.mask.flags[i] = 1;
      out.truth.push_back(c);
    } else {
      b.volume.values[i] = hu(-60.0 + 20.0 * unit(rng));
    }
  }

  for (int k = 0; k < spec.n_slices; ++k) {
    const double s = k * spec.slice_step;
    CenterlinePoint cp;
    cp.s = s;
    cp.position = Vec3d(0.0, 0.0, s);
    cp.tangent = Vec3d::UnitZ();
    b.centerline.points.push_back(cp);

    // slice frame for a z tangent is e1 = x, e2 = y, so (u, v) = (x, y)
    const auto m = morphology_at(spec, s);
    SliceContour sc;
    for (int j = 0; j < spec.contour_points; ++j) {
      const double a = 360.0 * j / spec.contour_points;
      const double ar = a * M_PI / 180.0;
      const double r_out = m.lumen_radius + m.thickness(spec.intima_mean, a);
      sc.lumen.emplace_back(m.lumen_radius * std::cos(ar), m.lumen_radius * std::sin(ar));
      sc.outer.emplace_back(r_out * std::cos(ar), r_out * std::sin(ar));
    }
    b.contours.slices.push_back(std::move(sc));

    ProfileSample ps;
    ps.s = s;
    ps.in_stent = k >= spec.stent_begin && k <= spec.stent_end;
    const double d_pre = 2.0 * m.lumen_radius;
    ps.d_pre = d_pre;
    ps.d_post = ps.in_stent ? d_pre * spec.stent_expansion : d_pre;
    const double noise = 6.0 * unit(rng);
    const double rest = ps.in_stent ? restenosis_truth(m, noise) : 0.0;
    if (std::find(spec.missing_followup.begin(), spec.missing_followup.end(), k) == spec.missing_followup.end())
      ps.d_followup = *ps.d_post * (1.0 - rest / 100.0);
    b.profiles.samples.push_back(ps);
  }
  b.config_text = "# synthetic case, seed " + std::to_string(spec.seed) + "\n";
  validate_bundle(b);
  return out;
}

/// Samples of a 1D Gaussian mixture with their generating labels.
struct MixtureSamples {
  std::vector<double> values;
  std::vector<PlaqueComponent> labels;
};

inline MixtureSamples mixture_samples(std::size_t n, const std::array<double, 4>& means,
                                      const std::array<double, 4>& sigmas, const std::array<double, 4>& weights,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> unit(0.0, 1.0);
  MixtureSamples out;
  out.values.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng);
    out.values.push_back(means[k] + sigmas[k] * unit(rng));
    out.labels.push_back(kAllComponents[k]);
  }
  return out;
}

}  // namespace plaquemech::synth
