#pragma once

// Quasi-static plane-strain finite elements for a pressurized, stented
// cross-section.
//
// Loads acting on the slice:
//   * follower pressure on the lumen edges (normal to the deformed edge),
//   * linear radial springs on the outer boundary (per unit reference length),
//   * a rigid circular stent centered on the reference lumen centroid, enforced
//     by a penalty on lumen nodes, with augmented-Lagrangian updates at the end
//     of an unloading phase until the penetration tolerance is met,
//   * anchors that remove the rigid-body modes the other terms leave free.
//     The remaining loads are self-equilibrated, so anchors carry no reaction.
//
// Sign convention: residual R = f_int - f_ext, tangent K = dR/du.
// Units: mm, kPa, forces in kPa*mm (per unit out-of-plane depth).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "plaquemech/constitutive.hpp"
#include "plaquemech/error.hpp"
#include "plaquemech/mesh.hpp"

namespace plaquemech::fe {

using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

// ---------------------------------------------------------------------------
// Load program

struct InflateToPressure {
  double pressure_kpa = 0.0;
  int n_steps = 10;
};

/// Drives the lumen pressure so that the mean lumen-node distance from the
/// slice center reaches `radius_mm`.
struct InflateToMeanRadius {
  double radius_mm = 0.0;
  int n_steps = 10;
};

struct Stent {
  double radius_mm = 0.0;
  double k_penalty = 1e3;  // kPa/mm
};

/// Ramps the pressure to zero. With a stent, the stent radius seen by the
/// wall ramps from min(stent radius, smallest lumen radius at phase start)
/// up to the stent radius over the same steps.
struct Unload {
  int n_steps = 10;
  std::optional<Stent> stent;
};

using LoadPhase = std::variant<InflateToPressure, InflateToMeanRadius, Unload>;

struct LoadProgram {
  std::vector<LoadPhase> phases;
  double outer_spring_stiffness = 10.0;  // kPa/mm

  void validate() const {
    if (!(outer_spring_stiffness >= 0.0))
      throw Error(ErrorCode::PreconditionViolation, "outer spring stiffness must be >= 0");
    for (const auto& phase : phases) {
      std::visit(
          [](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if (p.n_steps < 1) throw Error(ErrorCode::PreconditionViolation, "n_steps must be >= 1");
            if constexpr (std::is_same_v<T, InflateToPressure>) {
              if (!(p.pressure_kpa >= 0.0)) throw Error(ErrorCode::PreconditionViolation, "p_max must be >= 0");
            } else if constexpr (std::is_same_v<T, InflateToMeanRadius>) {
              if (!(p.radius_mm > 0.0)) throw Error(ErrorCode::PreconditionViolation, "target radius must be > 0");
            } else {
              if (p.stent && !(p.stent->radius_mm > 0.0))
                throw Error(ErrorCode::PreconditionViolation, "stent radius must be > 0");
              if (p.stent && !(p.stent->k_penalty > 0.0))
                throw Error(ErrorCode::PreconditionViolation, "stent penalty must be > 0");
            }
          },
          phase);
    }
  }
};

struct SolverSettings {
  double abs_tol = 1e-10;  // kPa*mm
  double rel_tol = 1e-8;
  int max_iter = 25;
  int max_line_search = 10;
  int max_halvings = 4;
  double radius_tol = 1e-10;        // mm, mean-radius constraint
  double penetration_tol = 1e-4;    // mm
  int max_augmentations = 60;
};

// ---------------------------------------------------------------------------
// Contact

struct ContactResult {
  double gap = 0.0;                     // r_stent - |x|, positive means penetration
  Point2 force = Point2::Zero();        // per unit boundary length (kPa)
};

/// Rigid-circle contact for one lumen point given relative to the stent
/// center. `multiplier` is the augmented-Lagrangian contact pressure.
inline ContactResult contact_gap(const Point2& position, double r_stent, double k_penalty,
                                 double multiplier = 0.0) {
  if (!(r_stent > 0.0)) throw Error(ErrorCode::PreconditionViolation, "stent radius must be > 0");
  ContactResult c;
  const double r = position.norm();
  c.gap = r_stent - r;
  const double pn = std::max(multiplier + k_penalty * c.gap, 0.0);
  if (pn > 0.0 && r > 0.0) c.force = pn * (position / r);
  return c;
}

// ---------------------------------------------------------------------------
// Model and state

struct GaussPoint {
  Eigen::Matrix<double, 2, 4> dN_dX;  // reference shape gradients
  double dA0 = 0.0;                   // weight * reference Jacobian
  Eigen::Vector2d circumferential;    // reference in-plane fiber tangent
};

/// Element-center data for the one-point Jacobian-energy quadrature.
struct CenterPoint {
  Eigen::Matrix<double, 2, 4> dN_dX;
  double A0 = 0.0;  // reference element area
};

/// Immutable, per-slice discretization data.
class Model {
 public:
  Model(CrossSectionMesh mesh, const MaterialTable& table, double spring_stiffness)
      : mesh_(std::move(mesh)), spring_k_(spring_stiffness) {
    const std::size_t ne = mesh_.num_elements();
    materials_.reserve(ne);
    gauss_.resize(ne);
    center_.resize(ne);
    double mu_max = 0.0;
    for (std::size_t e = 0; e < ne; ++e) {
      const MaterialParams& m = table[mesh_.element_material[e]];
      m.validate(std::string(name_of(mesh_.element_material[e])));
      materials_.push_back(m);
      mu_max = std::max(mu_max, m.mu_kpa());
      const auto X = mesh_.element_coords(e);
      const auto& gps = q4::gauss_points();
      for (int g = 0; g < 4; ++g) {
        const auto dN = q4::shape_derivatives(gps[g][0], gps[g][1]);
        const Eigen::Matrix2d J0 = X * dN.transpose();
        const double det = J0.determinant();
        if (!(det > 0.0))
          throw Error(ErrorCode::DegenerateElement, "element " + std::to_string(e) + " has non-positive Jacobian");
        GaussPoint& gp = gauss_[e][g];
        gp.dN_dX = J0.transpose().inverse() * dN;
        gp.dA0 = q4::kGaussWeight * det;
        const Point2 pos = X * q4::shape(gps[g][0], gps[g][1]) - mesh_.center;
        gp.circumferential = Eigen::Vector2d(-pos.y(), pos.x()).normalized();
        center_[e].A0 += gp.dA0;
      }
      const auto dNc = q4::shape_derivatives(0.0, 0.0);
      const Eigen::Matrix2d Jc = X * dNc.transpose();
      center_[e].dN_dX = Jc.transpose().inverse() * dNc;
    }
    anchor_stiffness_ = mu_max;
    build_pattern();

    const auto& lumen = mesh_.lumen_boundary_nodes;
    const std::size_t nl = lumen.size();
    lumen_length_.assign(nl, 0.0);
    for (std::size_t i = 0; i < nl; ++i) {
      const double len = (node(lumen[(i + 1) % nl]) - node(lumen[i])).norm();
      lumen_length_[i] += 0.5 * len;
      lumen_length_[(i + 1) % nl] += 0.5 * len;
    }
    const auto& outer = mesh_.outer_boundary_nodes;
    const std::size_t no = outer.size();
    outer_length_.assign(no, 0.0);
    outer_normal_.resize(no);
    for (std::size_t i = 0; i < no; ++i) {
      const double len = (node(outer[(i + 1) % no]) - node(outer[i])).norm();
      outer_length_[i] += 0.5 * len;
      outer_length_[(i + 1) % no] += 0.5 * len;
      outer_normal_[i] = (node(outer[i]) - mesh_.center).normalized();
    }

    // Rigid-body gauge on outer nodes at sectors 0, n/2 and n/4, in the
    // frame of the sector-0 ray. Radial springs leave only the rotation free.
    const int n = mesh_.n_sectors;
    const Point2 d0(std::cos(mesh_.sector0_angle), std::sin(mesh_.sector0_angle));
    const Point2 t0(-d0.y(), d0.x());
    anchors_.push_back({outer[0], t0});
    if (spring_k_ == 0.0) {
      anchors_.push_back({outer[static_cast<std::size_t>(n / 2)], t0});
      anchors_.push_back({outer[static_cast<std::size_t>(n / 4)], d0});
    }
  }

  const CrossSectionMesh& mesh() const { return mesh_; }
  const MaterialParams& material(std::size_t e) const { return materials_[e]; }
  const std::array<GaussPoint, 4>& gauss(std::size_t e) const { return gauss_[e]; }
  const CenterPoint& center_point(std::size_t e) const { return center_[e]; }
  std::size_t num_dofs() const { return 2 * mesh_.num_nodes(); }
  double spring_stiffness() const { return spring_k_; }
  double anchor_stiffness() const { return anchor_stiffness_; }
  const std::vector<double>& lumen_tributary_length() const { return lumen_length_; }
  const std::vector<double>& outer_tributary_length() const { return outer_length_; }
  const std::vector<Point2>& outer_normal() const { return outer_normal_; }

  struct Anchor {
    int node;
    Point2 direction;
  };
  const std::vector<Anchor>& anchors() const { return anchors_; }

  Point2 node(int i) const { return mesh_.nodes[static_cast<std::size_t>(i)]; }

  /// Zero-valued tangent with the full sparsity pattern (every coupling is
  /// between nodes of a common element).
  const SparseMatrix& pattern() const { return pattern_; }

  /// Value-array slots of element e's 8x8 block, row-major over (2a+i, 2b+k).
  const std::array<int, 64>& element_slots(std::size_t e) const { return slots_[e]; }

  /// Value-array slot of entry (row, col); the entry must be in the pattern.
  int slot(int row, int col) const {
    const int* inner = pattern_.innerIndexPtr();
    const int* first = inner + pattern_.outerIndexPtr()[col];
    const int* last = inner + pattern_.outerIndexPtr()[col + 1];
    const int* it = std::lower_bound(first, last, row);
    if (it == last || *it != row) throw Error(ErrorCode::PreconditionViolation, "entry outside tangent pattern");
    return static_cast<int>(it - inner);
  }

  Point2 position(const VectorXd& u, int i) const {
    return node(i) + Point2(u(2 * i), u(2 * i + 1));
  }

  /// Mean distance of the lumen nodes from the slice center.
  double mean_lumen_radius(const VectorXd& u) const {
    double s = 0.0;
    for (int i : mesh_.lumen_boundary_nodes) s += (position(u, i) - mesh_.center).norm();
    return s / static_cast<double>(mesh_.lumen_boundary_nodes.size());
  }

  double min_lumen_radius(const VectorXd& u) const {
    double m = std::numeric_limits<double>::infinity();
    for (int i : mesh_.lumen_boundary_nodes) m = std::min(m, (position(u, i) - mesh_.center).norm());
    return m;
  }

 private:
  void build_pattern() {
    const auto ndof = static_cast<Eigen::Index>(num_dofs());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh_.num_elements() * 64);
    for (const auto& conn : mesh_.elements)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          for (int i = 0; i < 2; ++i)
            for (int k = 0; k < 2; ++k) trip.emplace_back(2 * conn[a] + i, 2 * conn[b] + k, 0.0);
    pattern_.resize(ndof, ndof);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    slots_.resize(mesh_.num_elements());
    for (std::size_t e = 0; e < mesh_.num_elements(); ++e) {
      const auto& conn = mesh_.elements[e];
      for (int a = 0; a < 4; ++a)
        for (int i = 0; i < 2; ++i)
          for (int b = 0; b < 4; ++b)
            for (int k = 0; k < 2; ++k)
              slots_[e][static_cast<std::size_t>(8 * (2 * a + i) + 2 * b + k)] =
                  slot(2 * conn[a] + i, 2 * conn[b] + k);
    }
  }

  CrossSectionMesh mesh_;
  SparseMatrix pattern_;
  std::vector<std::array<int, 64>> slots_;
  std::vector<MaterialParams> materials_;
  std::vector<std::array<GaussPoint, 4>> gauss_;
  std::vector<CenterPoint> center_;
  double spring_k_ = 0.0;
  double anchor_stiffness_ = 1.0;
  std::vector<double> lumen_length_;
  std::vector<double> outer_length_;
  std::vector<Point2> outer_normal_;
  std::vector<Anchor> anchors_;
};

/// Active stent constraint during an assembly.
struct StentLoad {
  double radius_mm = 0.0;
  double k_penalty = 1e3;
  std::vector<double> multipliers;  // per lumen node (kPa), may be empty
};

struct LoadState {
  double pressure = 0.0;
  std::optional<StentLoad> stent;
};

struct Assembly {
  VectorXd residual;
  VectorXd pressure_load;  // d f_ext / d p at the current configuration
  SparseMatrix tangent;
};

/// Kinematics at one integration point of the current configuration.
struct PointKinematics {
  Eigen::Matrix2d F;
  Eigen::Matrix<double, 2, 4> grad;  // spatial shape gradients
  double dv = 0.0;                   // current area weight
};

namespace detail {

inline PointKinematics kinematics(const Model& model, std::size_t e, const Eigen::Matrix<double, 2, 4>& dN_dX,
                                  double dA0, const VectorXd& u) {
  const auto& conn = model.mesh().elements[e];
  Eigen::Matrix<double, 2, 4> x;
  for (int a = 0; a < 4; ++a) x.col(a) = model.position(u, conn[a]);
  PointKinematics k;
  k.F = x * dN_dX.transpose();
  const double J = k.F.determinant();
  if (!(J > 0.0))
    throw Error(ErrorCode::NonPositiveJacobian, "element " + std::to_string(e) + " J = " + std::to_string(J));
  k.grad = k.F.transpose().inverse() * dN_dX;
  k.dv = J * dA0;
  return k;
}

}  // namespace detail

inline PointKinematics point_kinematics(const Model& model, std::size_t e, int g, const VectorXd& u) {
  const GaussPoint& gp = model.gauss(e)[static_cast<std::size_t>(g)];
  return detail::kinematics(model, e, gp.dN_dX, gp.dA0, u);
}

inline PointKinematics center_kinematics(const Model& model, std::size_t e, const VectorXd& u) {
  const CenterPoint& cp = model.center_point(e);
  return detail::kinematics(model, e, cp.dN_dX, cp.A0, u);
}

/// Residual, pressure load vector and (optionally) tangent at displacement u.
inline Assembly assemble(const Model& model, const VectorXd& u, const LoadState& load, bool with_tangent = true) {
  const auto& mesh = model.mesh();
  const std::size_t ndof = model.num_dofs();
  Assembly out;
  out.residual = VectorXd::Zero(static_cast<Eigen::Index>(ndof));
  out.pressure_load = VectorXd::Zero(static_cast<Eigen::Index>(ndof));
  double* kv = nullptr;
  if (with_tangent) {
    out.tangent = model.pattern();
    kv = out.tangent.valuePtr();
  }
  auto add_block = [&](int row_node, int col_node, const Eigen::Matrix2d& k) {
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) kv[model.slot(2 * row_node + r, 2 * col_node + c)] += k(r, c);
  };

  // Selective integration: stretch energy at the 2x2 Gauss points, Jacobian
  // energy U(J) at the element center (one-point, mean-dilatation style).
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto& conn = mesh.elements[e];
    const MaterialParams& mat = model.material(e);
    Eigen::Matrix<double, 8, 1> fe = Eigen::Matrix<double, 8, 1>::Zero();
    Eigen::Matrix<double, 8, 8> ke = Eigen::Matrix<double, 8, 8>::Zero();

    auto add_point = [&](const PointKinematics& kin, const Mat3& sigma, const Tensor4* c) {
      const Eigen::Matrix2d s2 = sigma.topLeftCorner<2, 2>();
      const Eigen::Matrix<double, 2, 4> sg = s2 * kin.grad;
      for (int a = 0; a < 4; ++a) fe.segment<2>(2 * a) += sg.col(a) * kin.dv;
      if (!with_tangent) return;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          const double geo = kin.grad.col(a).dot(sg.col(b));
          for (int i = 0; i < 2; ++i) {
            for (int k = 0; k < 2; ++k) {
              double v = i == k ? geo : 0.0;
              if (c != nullptr)
                for (int j = 0; j < 2; ++j)
                  for (int l = 0; l < 2; ++l)
                    v += kin.grad(j, a) * (*c)(voigt9(i, j), voigt9(k, l)) * kin.grad(l, b);
              ke(2 * a + i, 2 * b + k) += v * kin.dv;
            }
          }
        }
      }
    };

    for (int g = 0; g < 4; ++g) {
      const auto kin = point_kinematics(model, e, g, u);
      const auto state =
          DeformationState::plane_strain(kin.F, model.gauss(e)[static_cast<std::size_t>(g)].circumferential);
      const Mat3 sigma = stretch_stress(state, mat);
      if (with_tangent && mat.has_fibers) {
        const Tensor4 c = stretch_tangent(state, mat);
        add_point(kin, sigma, &c);
      } else {
        add_point(kin, sigma, nullptr);
      }
    }
    {
      const auto kin = center_kinematics(model, e, u);
      const double J = kin.F.determinant();
      const Mat3 sigma = jacobian_pressure(J, mat) * Mat3::Identity();
      if (with_tangent) {
        const Tensor4 c = jacobian_tangent(J, mat);
        add_point(kin, sigma, &c);
      } else {
        add_point(kin, sigma, nullptr);
      }
    }

    for (int a = 0; a < 4; ++a) out.residual.segment<2>(2 * conn[a]) += fe.segment<2>(2 * a);
    if (with_tangent) {
      const auto& slots = model.element_slots(e);
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) kv[slots[static_cast<std::size_t>(8 * r + c)]] += ke(r, c);
    }
  }

  // Follower pressure: per edge a->b of the counterclockwise lumen loop,
  // each end node receives (p/2) * rot(x_b - x_a), rot(dx, dy) = (dy, -dx).
  const auto& lumen = mesh.lumen_boundary_nodes;
  const std::size_t nl = lumen.size();
  for (std::size_t i = 0; i < nl; ++i) {
    const int a = lumen[i];
    const int b = lumen[(i + 1) % nl];
    const Point2 d = model.position(u, b) - model.position(u, a);
    const Point2 half(0.5 * d.y(), -0.5 * d.x());
    out.pressure_load.segment<2>(2 * a) += half;
    out.pressure_load.segment<2>(2 * b) += half;
    if (with_tangent && load.pressure != 0.0) {
      // d(half)/dx_b = 0.5*[[0,1],[-1,0]], d(half)/dx_a = -that; K -= p * d f / dx
      const double h = 0.5 * load.pressure;
      Eigen::Matrix2d rot;
      rot << 0.0, h, -h, 0.0;
      for (int node : {a, b}) {
        add_block(node, b, -rot);
        add_block(node, a, rot);
      }
    }
  }
  out.residual -= load.pressure * out.pressure_load;

  // Outer radial springs.
  const double ks = model.spring_stiffness();
  if (ks > 0.0) {
    const auto& outer = mesh.outer_boundary_nodes;
    for (std::size_t i = 0; i < outer.size(); ++i) {
      const int a = outer[i];
      const Point2 n = model.outer_normal()[i];
      const double kl = ks * model.outer_tributary_length()[i];
      const Point2 ua(u(2 * a), u(2 * a + 1));
      out.residual.segment<2>(2 * a) += kl * ua.dot(n) * n;
      if (with_tangent) add_block(a, a, kl * n * n.transpose());
    }
  }

  // Rigid-circle stent on lumen nodes.
  if (load.stent) {
    const StentLoad& st = *load.stent;
    for (std::size_t i = 0; i < nl; ++i) {
      const int a = lumen[i];
      const Point2 rel = model.position(u, a) - mesh.center;
      const double lam = st.multipliers.empty() ? 0.0 : st.multipliers[i];
      const auto c = contact_gap(rel, st.radius_mm, st.k_penalty, lam);
      const double len = model.lumen_tributary_length()[i];
      out.residual.segment<2>(2 * a) -= len * c.force;
      const double pn = std::max(lam + st.k_penalty * c.gap, 0.0);
      if (with_tangent && pn > 0.0) {
        const double r = rel.norm();
        const Point2 n = rel / r;
        const Eigen::Matrix2d nn = n * n.transpose();
        add_block(a, a, len * (st.k_penalty * nn - (pn / r) * (Eigen::Matrix2d::Identity() - nn)));
      }
    }
  }

  // Rigid-body anchors.
  const double ka = model.anchor_stiffness();
  for (const auto& anchor : model.anchors()) {
    const int a = anchor.node;
    const Point2 v = anchor.direction;
    const Point2 ua(u(2 * a), u(2 * a + 1));
    out.residual.segment<2>(2 * a) += ka * ua.dot(v) * v;
    if (with_tangent) add_block(a, a, ka * v * v.transpose());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Solve state

struct GaussPointState {
  Mat3 F = Mat3::Identity();
  Mat3 stress = Mat3::Zero();  // Cauchy, kPa
  double area = 0.0;           // current area weight, mm^2
};

struct SolveState {
  VectorXd displacement;
  std::vector<std::array<GaussPointState, 4>> gauss;
  double pressure = 0.0;          // applied lumen pressure (the load factor), kPa
  bool converged = false;
  std::vector<double> newton_history;  // residual norms of the last Newton solve
  std::vector<double> contact_multipliers;
  std::optional<StentLoad> stent;      // stent active in this state, if any

  static SolveState reference(const Model& model) {
    SolveState s;
    s.displacement = VectorXd::Zero(static_cast<Eigen::Index>(model.num_dofs()));
    s.converged = true;
    return s;
  }
};

/// Fills per-Gauss-point F, Cauchy stress and current area weights. The
/// reported stress is the Gauss-point stretch stress plus the element's
/// center Jacobian pressure, matching the element's quadrature.
inline void update_fields(const Model& model, SolveState& state) {
  const auto& mesh = model.mesh();
  state.gauss.assign(mesh.num_elements(), {});
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto& mat = model.material(e);
    const double pc = jacobian_pressure(center_kinematics(model, e, state.displacement).F.determinant(), mat);
    for (int g = 0; g < 4; ++g) {
      const auto kin = point_kinematics(model, e, g, state.displacement);
      const auto ds =
          DeformationState::plane_strain(kin.F, model.gauss(e)[static_cast<std::size_t>(g)].circumferential);
      auto& gs = state.gauss[e][static_cast<std::size_t>(g)];
      gs.F = ds.F;
      gs.stress = stretch_stress(ds, mat) + pc * Mat3::Identity();
      gs.area = kin.dv;
    }
  }
}

/// Load target of one Newton solve.
struct StepTarget {
  std::optional<double> pressure;       // pressure-controlled
  std::optional<double> mean_radius;    // radius-controlled, pressure is an unknown
  std::optional<StentLoad> stent;
};

/// Direct sparse solve of K x = b. Every load term is conservative (the
/// follower pressure acts on a closed loop), so K is symmetric and a sparse
/// LDL^T is tried first; LU with partial pivoting is the fallback when the
/// LDL^T solve is not accurate (strongly indefinite K).
class LinearSolver {
 public:
  void factorize(const SparseMatrix& K) {
    K_ = &K;
    use_lu_ = false;
    if (!ldlt_analyzed_ || K.rows() != size_) {
      ldlt_.analyzePattern(K);
      ldlt_analyzed_ = true;
      lu_analyzed_ = false;
      size_ = K.rows();
    }
    ldlt_.factorize(K);
    if (ldlt_.info() != Eigen::Success) factorize_lu();
  }

  VectorXd solve(const VectorXd& rhs) {
    if (!use_lu_) {
      VectorXd x = ldlt_.solve(rhs);
      if (ldlt_.info() == Eigen::Success && x.allFinite() &&
          ((*K_) * x - rhs).norm() <= 1e-9 * std::max(rhs.norm(), 1e-300))
        return x;
      factorize_lu();
    }
    VectorXd x = lu_.solve(rhs);
    if (lu_.info() != Eigen::Success || !x.allFinite())
      throw Error(ErrorCode::SingularSystem, "sparse LU solve failed");
    return x;
  }

 private:
  void factorize_lu() {
    if (!lu_analyzed_) {
      lu_.analyzePattern(*K_);
      lu_analyzed_ = true;
    }
    lu_.factorize(*K_);
    if (lu_.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "sparse LU factorization failed");
    use_lu_ = true;
  }

  const SparseMatrix* K_ = nullptr;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
  bool ldlt_analyzed_ = false;
  bool lu_analyzed_ = false;
  bool use_lu_ = false;
  Eigen::Index size_ = 0;
};

namespace detail {

struct Trial {
  VectorXd u;
  double p = 0.0;
  VectorXd residual;
  double h = 0.0;  // radius constraint violation
  double merit = 0.0;
};

inline double residual_norm(const VectorXd& r) { return r.norm(); }

}  // namespace detail

/// Newton iteration with backtracking line search from `start` to the load
/// target. Converged when ||R|| <= max(abs_tol, rel_tol * ||R_0||) (and, for
/// radius control, |mean radius - target| <= radius_tol). The history counts
/// residual evaluations, so a step that starts in equilibrium reports 1.
inline SolveState newton_solve(const Model& model, const SolveState& start, const StepTarget& target,
                               const SolverSettings& settings, LinearSolver& solver) {
  if (!start.converged) throw Error(ErrorCode::PreconditionViolation, "previous state not converged");
  const bool radius_mode = target.mean_radius.has_value();
  const double radius_scale =
      model.anchor_stiffness() * std::sqrt(static_cast<double>(model.mesh().lumen_boundary_nodes.size()));

  LoadState load;
  load.stent = target.stent;

  auto evaluate = [&](const VectorXd& u, double p, bool tangent) {
    load.pressure = p;
    return assemble(model, u, load, tangent);
  };
  auto constraint = [&](const VectorXd& u) {
    return radius_mode ? model.mean_lumen_radius(u) - *target.mean_radius : 0.0;
  };

  SolveState state = start;
  state.stent = target.stent;
  state.converged = false;
  state.newton_history.clear();
  double p = radius_mode ? start.pressure : *target.pressure;
  VectorXd u = start.displacement;

  Assembly asmb = evaluate(u, p, true);
  double h = constraint(u);
  const double r0 = detail::residual_norm(asmb.residual);
  const double tol = std::max(settings.abs_tol, settings.rel_tol * r0);

  for (int it = 0;; ++it) {
    const double rn = detail::residual_norm(asmb.residual);
    state.newton_history.push_back(rn);
    if (!std::isfinite(rn)) throw Error(ErrorCode::DivergedNewton, "non-finite residual");
    if (rn <= tol && std::abs(h) <= settings.radius_tol) break;
    if (it >= settings.max_iter)
      throw Error(ErrorCode::DivergedNewton, "no convergence in " + std::to_string(settings.max_iter) +
                                                 " iterations, |R| = " + std::to_string(rn));

    solver.factorize(asmb.tangent);
    VectorXd du = solver.solve(-asmb.residual);
    double dp = 0.0;
    if (radius_mode) {
      // bordered system: [K -f_p; g^T 0] [du; dp] = [-R; -h]
      const VectorXd b = solver.solve(asmb.pressure_load);
      VectorXd g = VectorXd::Zero(du.size());
      const double inv_n = 1.0 / static_cast<double>(model.mesh().lumen_boundary_nodes.size());
      for (int i : model.mesh().lumen_boundary_nodes) {
        const Point2 rel = model.position(u, i) - model.mesh().center;
        g.segment<2>(2 * i) = rel.normalized() * inv_n;
      }
      const double gb = g.dot(b);
      if (gb == 0.0) throw Error(ErrorCode::SingularSystem, "radius constraint is insensitive to pressure");
      dp = (-h - g.dot(du)) / gb;
      du += dp * b;
    }

    const double merit0 = std::hypot(rn, radius_scale * h);
    double alpha = 1.0;
    bool accepted = false;
    for (int cut = 0; cut <= settings.max_line_search; ++cut, alpha *= 0.5) {
      const VectorXd ut = u + alpha * du;
      const double pt = p + alpha * dp;
      try {
        Assembly trial = evaluate(ut, pt, false);
        const double ht = constraint(ut);
        const double merit = std::hypot(detail::residual_norm(trial.residual), radius_scale * ht);
        if (std::isfinite(merit) && (merit < (1.0 - 1e-4 * alpha) * merit0 || merit <= tol)) {
          u = ut;
          p = pt;
          accepted = true;
          break;
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NonPositiveJacobian) throw;
      }
    }
    if (!accepted) throw Error(ErrorCode::DivergedNewton, "line search failed");
    asmb = evaluate(u, p, true);
    h = constraint(u);
  }

  state.displacement = u;
  state.pressure = p;
  state.converged = true;
  return state;
}

inline SolveState newton_solve(const Model& model, const SolveState& start, const StepTarget& target,
                               const SolverSettings& settings = {}) {
  LinearSolver solver;
  return newton_solve(model, start, target, settings, solver);
}

/// Largest stent penetration over the lumen nodes (0 when none or no stent).
inline double max_penetration(const Model& model, const SolveState& state) {
  if (!state.stent) return 0.0;
  double g = 0.0;
  for (int i : model.mesh().lumen_boundary_nodes) {
    const double r = (model.position(state.displacement, i) - model.mesh().center).norm();
    g = std::max(g, state.stent->radius_mm - r);
  }
  return g;
}

/// One multiplier update for the stent constraint. Plain Uzawa steps
/// (lambda += k g) converge slowly when the wall is stiff relative to the
/// penalty, so the update solves the linearized gap equations instead:
/// with S_ij = d(-g_i)/d(lambda_j) from the current tangent, S dlambda = g on
/// the active nodes, then lambda = max(lambda + dlambda, 0).
inline void update_multipliers(const Model& model, const SolveState& state, StentLoad& stent,
                               LinearSolver& solver) {
  const auto& mesh = model.mesh();
  const auto& lumen = mesh.lumen_boundary_nodes;
  LoadState load;
  load.pressure = state.pressure;
  load.stent = stent;
  const Assembly asmb = assemble(model, state.displacement, load, true);
  solver.factorize(asmb.tangent);

  std::vector<std::size_t> active;
  std::vector<Point2> normal(lumen.size());
  VectorXd gap(static_cast<Eigen::Index>(lumen.size()));
  for (std::size_t i = 0; i < lumen.size(); ++i) {
    const Point2 rel = model.position(state.displacement, lumen[i]) - mesh.center;
    normal[i] = rel.normalized();
    gap(static_cast<Eigen::Index>(i)) = stent.radius_mm - rel.norm();
    if (stent.multipliers[i] + stent.k_penalty * gap(static_cast<Eigen::Index>(i)) > 0.0) active.push_back(i);
  }
  if (active.empty()) return;

  const auto na = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd S(na, na);
  Eigen::VectorXd g(na);
  for (Eigen::Index c = 0; c < na; ++c) {
    const std::size_t j = active[static_cast<std::size_t>(c)];
    VectorXd rhs = VectorXd::Zero(static_cast<Eigen::Index>(model.num_dofs()));
    rhs.segment<2>(2 * lumen[j]) = model.lumen_tributary_length()[j] * normal[j];
    const VectorXd du = solver.solve(rhs);
    for (Eigen::Index r = 0; r < na; ++r) {
      const std::size_t i = active[static_cast<std::size_t>(r)];
      S(r, c) = normal[i].dot(du.segment<2>(2 * lumen[i]));
    }
    g(c) = gap(static_cast<Eigen::Index>(j));
  }
  const Eigen::VectorXd dl = S.partialPivLu().solve(g);
  if (!dl.allFinite()) throw Error(ErrorCode::SingularSystem, "contact multiplier update failed");
  for (Eigen::Index r = 0; r < na; ++r) {
    double& lam = stent.multipliers[active[static_cast<std::size_t>(r)]];
    lam = std::max(lam + dl(r), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Load program driver

struct StepRecord {
  int phase = 0;
  int step = 0;           // accepted step counter within the phase
  double load_param = 0;  // phase progress in (0, 1]
  double pressure = 0;
  double mean_radius = 0;
  int halvings = 0;
  int augmentations = 0;
  std::vector<double> residuals;
};

struct ProgramResult {
  SolveState state_max;
  SolveState state_residual;
  std::vector<StepRecord> trace;
};

inline ProgramResult run_program(const Model& model, const LoadProgram& program,
                                 const SolverSettings& settings = {}) {
  program.validate();
  if (model.spring_stiffness() != program.outer_spring_stiffness)
    throw Error(ErrorCode::PreconditionViolation, "model spring stiffness differs from load program");

  LinearSolver solver;
  ProgramResult result;
  SolveState state = SolveState::reference(model);
  bool have_max = false;
  bool have_residual = false;

  for (std::size_t ph = 0; ph < program.phases.size(); ++ph) {
    const LoadPhase& phase = program.phases[ph];
    const double p_start = state.pressure;
    const double r_start = model.mean_lumen_radius(state.displacement);
    const double rmin_start = model.min_lumen_radius(state.displacement);
    const int n_steps = std::visit([](const auto& p) { return p.n_steps; }, phase);
    const bool is_unload = std::holds_alternative<Unload>(phase);

    auto target_at = [&](double t) {
      StepTarget target;
      if (const auto* ip = std::get_if<InflateToPressure>(&phase)) {
        target.pressure = p_start + t * (ip->pressure_kpa - p_start);
      } else if (const auto* ir = std::get_if<InflateToMeanRadius>(&phase)) {
        target.mean_radius = r_start + t * (ir->radius_mm - r_start);
      } else {
        const auto& ul = std::get<Unload>(phase);
        target.pressure = p_start * (1.0 - t);
        if (ul.stent) {
          const double r0 = std::min(ul.stent->radius_mm, rmin_start);
          StentLoad st;
          st.radius_mm = r0 + t * (ul.stent->radius_mm - r0);
          st.k_penalty = ul.stent->k_penalty;
          target.stent = st;
        }
      }
      return target;
    };

    const double base_dt = 1.0 / n_steps;
    double t = 0.0;
    double dt = base_dt;
    int halvings = 0;
    int step = 0;
    while (t < 1.0) {
      const bool last = t + dt >= 1.0 - 1e-12;
      const double t_next = last ? 1.0 : t + dt;
      try {
        SolveState next = newton_solve(model, state, target_at(t_next), settings, solver);
        StepRecord rec;
        rec.phase = static_cast<int>(ph);
        rec.step = ++step;
        rec.load_param = t_next;
        rec.halvings = halvings;
        rec.residuals = next.newton_history;

        if (last && is_unload && next.stent) {
          // augmented-Lagrangian updates until the penetration tolerance holds
          StepTarget aug = target_at(1.0);
          aug.stent->multipliers.assign(model.mesh().lumen_boundary_nodes.size(), 0.0);
          while (max_penetration(model, next) > settings.penetration_tol) {
            if (rec.augmentations == settings.max_augmentations)
              throw Error(ErrorCode::AbortedStep, "phase " + std::to_string(ph) +
                                                      ": stent penetration tolerance not reached");
            update_multipliers(model, next, *aug.stent, solver);
            next = newton_solve(model, next, aug, settings, solver);
            ++rec.augmentations;
            rec.residuals.insert(rec.residuals.end(), next.newton_history.begin(), next.newton_history.end());
          }
          next.contact_multipliers = aug.stent->multipliers;
        }

        rec.pressure = next.pressure;
        rec.mean_radius = model.mean_lumen_radius(next.displacement);
        result.trace.push_back(std::move(rec));
        state = std::move(next);
        t = t_next;
        halvings = 0;
        dt = std::min(base_dt, 2.0 * dt);
      } catch (const Error& err) {
        if (err.code() != ErrorCode::DivergedNewton && err.code() != ErrorCode::SingularSystem) throw;
        if (++halvings > settings.max_halvings) {
          throw Error(ErrorCode::AbortedStep, "phase " + std::to_string(ph) + " step " + std::to_string(step + 1) +
                                                  ": " + err.what());
        }
        dt *= 0.5;
      }
    }

    update_fields(model, state);
    if (is_unload) {
      result.state_residual = state;
      have_residual = true;
    } else {
      result.state_max = state;
      have_max = true;
    }
  }

  if (!have_max) {
    SolveState ref = SolveState::reference(model);
    update_fields(model, ref);
    result.state_max = ref;
  }
  if (!have_residual) {
    update_fields(model, state);
    result.state_residual = state;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Post-processing helpers

/// Nodal Cauchy stress by bilinear extrapolation of the Gauss values to the
/// element corners, averaged over the elements sharing each node.
inline std::vector<Mat3> recover_nodal_stress(const Model& model, const SolveState& state) {
  const auto& mesh = model.mesh();
  std::vector<Mat3> out(mesh.num_nodes(), Mat3::Zero());
  std::vector<int> count(mesh.num_nodes(), 0);
  const double s3 = std::sqrt(3.0);
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    for (int a = 0; a < 4; ++a) {
      const Eigen::Vector4d w = q4::shape(s3 * q4::kNodeCoords[a][0], s3 * q4::kNodeCoords[a][1]);
      Mat3 s = Mat3::Zero();
      for (int g = 0; g < 4; ++g) s += w(g) * state.gauss[e][static_cast<std::size_t>(g)].stress;
      const auto n = static_cast<std::size_t>(mesh.elements[e][a]);
      out[n] += s;
      ++count[n];
    }
  }
  for (std::size_t n = 0; n < out.size(); ++n)
    if (count[n] > 0) out[n] /= count[n];
  return out;
}

/// Mean hoop stress over the lumen nodes, hoop direction taken in the
/// deformed configuration.
inline double mean_lumen_hoop_stress(const Model& model, const SolveState& state) {
  const auto nodal = recover_nodal_stress(model, state);
  double sum = 0.0;
  for (int i : model.mesh().lumen_boundary_nodes) {
    const Point2 rel = model.position(state.displacement, i) - model.mesh().center;
    const Eigen::Vector2d t = Eigen::Vector2d(-rel.y(), rel.x()).normalized();
    sum += t.dot(nodal[static_cast<std::size_t>(i)].topLeftCorner<2, 2>() * t);
  }
  return sum / static_cast<double>(model.mesh().lumen_boundary_nodes.size());
}

}  // namespace plaquemech::fe
