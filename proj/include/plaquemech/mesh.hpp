#pragma once

// Layered cross-section meshes. A slice mesh is a structured annular grid of
// bilinear quads: `n_sectors` angular sectors times (intima + media +
// adventitia) radial rings. Node (layer j, sector k) has index
// j * n_sectors + k; element (ring j, sector k) has index j * n_sectors + k.
// Sector 0 starts on the ray from the lumen centroid through the first lumen
// contour vertex, so the mesh rotates with its input contours.

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "plaquemech/error.hpp"
#include "plaquemech/geometry.hpp"
#include "plaquemech/tissue.hpp"

namespace plaquemech {

/// Bilinear quadrilateral on [-1,1]^2, counterclockwise local node order.
namespace q4 {

inline constexpr std::array<std::array<double, 2>, 4> kNodeCoords{{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};

inline const std::array<std::array<double, 2>, 4>& gauss_points() {
  static const double g = 1.0 / std::sqrt(3.0);
  static const std::array<std::array<double, 2>, 4> pts{{{-g, -g}, {g, -g}, {g, g}, {-g, g}}};
  return pts;
}

inline constexpr double kGaussWeight = 1.0;

inline Eigen::Vector4d shape(double xi, double eta) {
  Eigen::Vector4d N;
  for (int a = 0; a < 4; ++a)
    N(a) = 0.25 * (1.0 + kNodeCoords[a][0] * xi) * (1.0 + kNodeCoords[a][1] * eta);
  return N;
}

/// Rows: d/dxi, d/deta; columns: local nodes.
inline Eigen::Matrix<double, 2, 4> shape_derivatives(double xi, double eta) {
  Eigen::Matrix<double, 2, 4> dN;
  for (int a = 0; a < 4; ++a) {
    const double xa = kNodeCoords[a][0];
    const double ya = kNodeCoords[a][1];
    dN(0, a) = 0.25 * xa * (1.0 + ya * eta);
    dN(1, a) = 0.25 * ya * (1.0 + xa * xi);
  }
  return dN;
}

/// Node coordinates as columns.
using ElementCoords = Eigen::Matrix<double, 2, 4>;

/// Jacobian determinant of the isoparametric map at (xi, eta).
inline double jacobian(const ElementCoords& X, double xi, double eta) {
  const Eigen::Matrix2d Jm = X * shape_derivatives(xi, eta).transpose();
  return Jm.determinant();
}

}  // namespace q4

struct MeshRings {
  int intima = 4;
  int media = 2;
  int adventitia = 2;

  int total() const { return intima + media + adventitia; }
  bool operator==(const MeshRings&) const = default;
};

struct CrossSectionMesh {
  std::vector<Point2> nodes;
  std::vector<std::array<int, 4>> elements;
  std::vector<Layer> element_layer;
  std::vector<Tissue> element_material;
  std::vector<int> lumen_boundary_nodes;  // counterclockwise
  std::vector<int> outer_boundary_nodes;  // counterclockwise
  int n_sectors = 0;
  MeshRings rings;
  Point2 center = Point2::Zero();  // reference lumen centroid
  double sector0_angle = 0.0;      // radians

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_elements() const { return elements.size(); }

  int element_ring(std::size_t e) const { return static_cast<int>(e) / n_sectors; }
  int element_sector(std::size_t e) const { return static_cast<int>(e) % n_sectors; }

  q4::ElementCoords element_coords(std::size_t e) const {
    q4::ElementCoords X;
    for (int a = 0; a < 4; ++a) X.col(a) = nodes[static_cast<std::size_t>(elements[e][a])];
    return X;
  }

  /// Vertex average of the element's four nodes.
  Point2 element_centroid(std::size_t e) const {
    Point2 c = Point2::Zero();
    for (int a = 0; a < 4; ++a) c += nodes[static_cast<std::size_t>(elements[e][a])];
    return 0.25 * c;
  }

  bool operator==(const CrossSectionMesh&) const = default;
};

struct MeshQuality {
  double min_jacobian = 0.0;
  double max_aspect_ratio = 0.0;
  double total_area = 0.0;
};

/// Minimum Jacobian determinant over all 2x2 Gauss points (on the [-1,1]^2
/// reference element, so a unit square reports 0.25), largest ratio of
/// longest to shortest element edge, and summed element area.
inline MeshQuality mesh_quality(const CrossSectionMesh& mesh) {
  MeshQuality q;
  q.min_jacobian = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto X = mesh.element_coords(e);
    for (const auto& gp : q4::gauss_points()) {
      const double j = q4::jacobian(X, gp[0], gp[1]);
      q.min_jacobian = std::min(q.min_jacobian, j);
      q.total_area += q4::kGaussWeight * j;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double len = (X.col((a + 1) % 4) - X.col(a)).norm();
      lo = std::min(lo, len);
      hi = std::max(hi, len);
    }
    q.max_aspect_ratio = std::max(q.max_aspect_ratio, lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
  }
  return q;
}

/// Validates one contour of a slice: at least 8 points, simple, counterclockwise.
inline void validate_contour(const Polyline& poly, const std::string& what) {
  if (poly.size() < 8)
    throw Error(ErrorCode::InvariantViolation, what + ": fewer than 8 points");
  if (!geom::is_simple(poly)) throw Error(ErrorCode::InvariantViolation, what + ": self-intersecting");
  if (!geom::is_ccw(poly)) throw Error(ErrorCode::InvariantViolation, what + ": not counterclockwise");
}

inline void validate_contour_pair(const Polyline& lumen, const Polyline& outer, const std::string& what) {
  validate_contour(lumen, what + " lumen");
  validate_contour(outer, what + " intima_outer");
  if (!geom::strictly_contains(outer, lumen))
    throw Error(ErrorCode::ContourCrossing, what + ": lumen not strictly inside intima_outer");
}

namespace detail {

inline double min_jacobian(const CrossSectionMesh& mesh) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto X = mesh.element_coords(e);
    for (const auto& gp : q4::gauss_points()) m = std::min(m, q4::jacobian(X, gp[0], gp[1]));
  }
  return m;
}

}  // namespace detail

/// Builds the layered structured mesh between a lumen and an intima-outer
/// contour. Intima rings interpolate linearly along each sector ray; media
/// and adventitia rings are offset along the outward vertex normals of the
/// sampled intima-outer loop. If that offset folds an element, the normals
/// are Laplacian-smoothed (up to 50 passes) before giving up.
inline CrossSectionMesh build_slice_mesh(const Polyline& lumen, const Polyline& intima_outer,
                                         double t_media, double t_adv, int n_sectors,
                                         const MeshRings& rings) {
  if (n_sectors < 8) throw Error(ErrorCode::PreconditionViolation, "n_sectors must be >= 8");
  if (rings.intima < 1 || rings.media < 1 || rings.adventitia < 1)
    throw Error(ErrorCode::PreconditionViolation, "each ring count must be >= 1");
  if (!(t_media > 0.0) || !(t_adv > 0.0))
    throw Error(ErrorCode::PreconditionViolation, "layer thicknesses must be positive");
  validate_contour_pair(lumen, intima_outer, "slice");

  CrossSectionMesh mesh;
  mesh.n_sectors = n_sectors;
  mesh.rings = rings;
  mesh.center = geom::centroid(lumen);
  const Point2 first = lumen.front() - mesh.center;
  mesh.sector0_angle = std::atan2(first.y(), first.x());

  const auto n = static_cast<std::size_t>(n_sectors);
  std::vector<Point2> inner(n), outer(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = mesh.sector0_angle + 2.0 * M_PI * static_cast<double>(k) / n_sectors;
    const Point2 dir(std::cos(angle), std::sin(angle));
    const auto hl = geom::ray_hits(mesh.center, dir, lumen);
    const auto ho = geom::ray_hits(mesh.center, dir, intima_outer);
    if (hl.size() != 1 || ho.size() != 1 || !(ho[0] > hl[0])) {
      throw Error(ErrorCode::ContourCrossing,
                  "sector " + std::to_string(k) + ": ray does not cross lumen then intima_outer exactly once");
    }
    inner[k] = mesh.center + hl[0] * dir;
    outer[k] = mesh.center + ho[0] * dir;
  }

  std::vector<Point2> normal(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Point2 d = outer[(k + 1) % n] - outer[(k + n - 1) % n];
    normal[k] = Point2(d.y(), -d.x()).normalized();
  }

  const int layers = rings.total() + 1;
  mesh.nodes.assign(static_cast<std::size_t>(layers) * n, Point2::Zero());
  auto fill_nodes = [&]() {
    for (int j = 0; j < layers; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        Point2 p;
        if (j <= rings.intima) {
          const double t = static_cast<double>(j) / rings.intima;
          p = inner[k] + t * (outer[k] - inner[k]);
        } else if (j <= rings.intima + rings.media) {
          const double t = static_cast<double>(j - rings.intima) / rings.media;
          p = outer[k] + (t * t_media) * normal[k];
        } else {
          const double t = static_cast<double>(j - rings.intima - rings.media) / rings.adventitia;
          p = outer[k] + (t_media + t * t_adv) * normal[k];
        }
        mesh.nodes[static_cast<std::size_t>(j) * n + k] = p;
      }
    }
  };
  fill_nodes();

  const int n_rings = rings.total();
  mesh.elements.reserve(static_cast<std::size_t>(n_rings) * n);
  for (int j = 0; j < n_rings; ++j) {
    for (int k = 0; k < n_sectors; ++k) {
      const int kn = (k + 1) % n_sectors;
      mesh.elements.push_back({j * n_sectors + k, (j + 1) * n_sectors + k, (j + 1) * n_sectors + kn,
                               j * n_sectors + kn});
      Layer layer = Layer::Adventitia;
      Tissue material = Tissue::Adventitia;
      if (j < rings.intima) {
        layer = Layer::Intima;
        material = Tissue::NormalIntima;
      } else if (j < rings.intima + rings.media) {
        layer = Layer::Media;
        material = Tissue::Media;
      }
      mesh.element_layer.push_back(layer);
      mesh.element_material.push_back(material);
    }
  }
  for (int k = 0; k < n_sectors; ++k) {
    mesh.lumen_boundary_nodes.push_back(k);
    mesh.outer_boundary_nodes.push_back(rings.total() * n_sectors + k);
  }

  for (int pass = 0; detail::min_jacobian(mesh) <= 0.0; ++pass) {
    if (pass == 50) throw Error(ErrorCode::DegenerateElement, "non-positive Jacobian after normal smoothing");
    std::vector<Point2> smoothed(n);
    for (std::size_t k = 0; k < n; ++k)
      smoothed[k] = (normal[(k + n - 1) % n] + 2.0 * normal[k] + normal[(k + 1) % n]).normalized();
    normal = smoothed;
    fill_nodes();
  }
  return mesh;
}

/// A classified sample in slice coordinates.
struct LabeledSample {
  Point2 position;
  PlaqueComponent label;
};

/// Each intima element takes the label of the sample nearest to its vertex
/// centroid; ties go to the lowest sample index. Media and adventitia keep
/// their layer material.
inline CrossSectionMesh assign_regions(CrossSectionMesh mesh, const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw Error(ErrorCode::NoSamplesForSlice, "no labeled samples for slice");
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    if (mesh.element_layer[e] != Layer::Intima) continue;
    const Point2 c = mesh.element_centroid(e);
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const double d2 = (samples[s].position - c).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = s;
      }
    }
    mesh.element_material[e] = to_tissue(samples[best].label);
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Synthetic morphology

/// Intima thickness t(theta) = mean * (1 + eccentricity * cos(theta - orientation)).
struct ThicknessProfile {
  double mean_mm = 0.5;
  double eccentricity = 0.0;
  double orientation_deg = 0.0;
};

struct Homogeneous {
  PlaqueComponent component = PlaqueComponent::Fibrotic;
};

/// Full-thickness calcified arc of more than 180 degrees.
struct CircumferentialCalc {
  double arc_deg = 270.0;
  double center_deg = 0.0;
};

/// Calcified block on the lumen side of the arc with `behind` between the
/// block and the media. `calcified_fraction` of the intima rings are calcified.
struct AsymmetricBlock {
  double arc_deg = 90.0;
  PlaqueComponent behind = PlaqueComponent::Fibrotic;
  double center_deg = 90.0;
  double calcified_fraction = 0.5;
};

/// Two full-thickness calcified arcs centered 180 degrees apart.
struct OpposingBlocks {
  double arc_deg = 60.0;
  double center_deg = 0.0;
};

struct MorphologyPattern {
  std::variant<Homogeneous, CircumferentialCalc, AsymmetricBlock, OpposingBlocks> kind;
  ThicknessProfile thickness{};
  PlaqueComponent background = PlaqueComponent::Fibrotic;

  void validate() const {
    auto check_arc = [](double arc) {
      if (!(arc > 0.0 && arc <= 360.0))
        throw Error(ErrorCode::PreconditionViolation, "arc must lie in (0, 360] degrees");
    };
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, CircumferentialCalc>) {
            check_arc(p.arc_deg);
            if (!(p.arc_deg > 180.0))
              throw Error(ErrorCode::PreconditionViolation, "circumferential calcification requires arc > 180");
          } else if constexpr (std::is_same_v<T, AsymmetricBlock>) {
            check_arc(p.arc_deg);
            if (!(p.calcified_fraction > 0.0 && p.calcified_fraction < 1.0))
              throw Error(ErrorCode::PreconditionViolation, "calcified_fraction must lie in (0, 1)");
          } else if constexpr (std::is_same_v<T, OpposingBlocks>) {
            check_arc(p.arc_deg);
            if (p.arc_deg > 180.0)
              throw Error(ErrorCode::PreconditionViolation, "opposing blocks cannot exceed 180 degrees each");
          }
        },
        kind);
    if (!(thickness.mean_mm > 0.0) || !(thickness.eccentricity >= 0.0 && thickness.eccentricity < 1.0))
      throw Error(ErrorCode::PreconditionViolation, "invalid intima thickness profile");
  }
};

struct SynthGeometry {
  double lumen_radius = 1.5;
  double t_media = 0.32;
  double t_adv = 0.34;
  int n_sectors = 36;
  MeshRings rings{4, 2, 2};
};

namespace detail {

/// Half-open angular membership: offset from center in [-arc/2, arc/2).
inline bool in_arc(double angle_deg, double center_deg, double arc_deg) {
  if (arc_deg >= 360.0) return true;
  double d = std::fmod(angle_deg - center_deg + 180.0, 360.0);
  if (d < 0.0) d += 360.0;
  d -= 180.0;
  constexpr double eps = 1e-9;
  return d >= -0.5 * arc_deg - eps && d < 0.5 * arc_deg - eps;
}

}  // namespace detail

/// Angle (degrees, relative to sector 0) of the middle of sector k.
inline double sector_center_deg(const CrossSectionMesh& mesh, int k) {
  return (k + 0.5) * 360.0 / mesh.n_sectors;
}

inline CrossSectionMesh synth_slice(const MorphologyPattern& pattern, const SynthGeometry& geo = {}) {
  pattern.validate();
  const int n = geo.n_sectors;
  Polyline lumen = geom::circle(Point2::Zero(), geo.lumen_radius, n);
  Polyline outer;
  outer.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * k / n;
    const double t = pattern.thickness.mean_mm *
                     (1.0 + pattern.thickness.eccentricity *
                                std::cos(a - pattern.thickness.orientation_deg * M_PI / 180.0));
    const double r = geo.lumen_radius + t;
    outer.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  CrossSectionMesh mesh = build_slice_mesh(lumen, outer, geo.t_media, geo.t_adv, n, geo.rings);

  const Tissue background = to_tissue(pattern.background);
  const int intima_rings = geo.rings.intima;
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    if (mesh.element_layer[e] != Layer::Intima) continue;
    const double angle = sector_center_deg(mesh, mesh.element_sector(e));
    const int ring = mesh.element_ring(e);
    Tissue t = background;
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, Homogeneous>) {
            t = to_tissue(p.component);
          } else if constexpr (std::is_same_v<T, CircumferentialCalc>) {
            if (detail::in_arc(angle, p.center_deg, p.arc_deg)) t = Tissue::Calcification;
          } else if constexpr (std::is_same_v<T, AsymmetricBlock>) {
            if (detail::in_arc(angle, p.center_deg, p.arc_deg)) {
              const int calc_rings =
                  std::clamp(static_cast<int>(std::lround(p.calcified_fraction * intima_rings)), 1,
                             std::max(1, intima_rings - 1));
              t = ring < calc_rings ? Tissue::Calcification : to_tissue(p.behind);
            }
          } else if constexpr (std::is_same_v<T, OpposingBlocks>) {
            if (detail::in_arc(angle, p.center_deg, p.arc_deg) ||
                detail::in_arc(angle, p.center_deg + 180.0, p.arc_deg))
              t = Tissue::Calcification;
          }
        },
        pattern.kind);
    mesh.element_material[e] = t;
  }
  return mesh;
}

}  // namespace plaquemech
