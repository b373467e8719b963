#pragma once

// Text dumps of meshes and solve states: CSV tables and legacy VTK.

#include <string>
#include <vector>

#include "plaquemech/fe_solver.hpp"
#include "plaquemech/mesh.hpp"
#include "plaquemech/stress_analysis.hpp"
#include "plaquemech/text.hpp"

namespace plaquemech::io {

using text::format_double;

/// node,x,y
inline std::string nodes_csv(const CrossSectionMesh& m) {
  std::string out = "node,x,y\n";
  for (std::size_t i = 0; i < m.num_nodes(); ++i)
    out += std::to_string(i) + "," + format_double(m.nodes[i].x()) + "," + format_double(m.nodes[i].y()) + "\n";
  return out;
}

/// element,n0,n1,n2,n3,layer,material
inline std::string elements_csv(const CrossSectionMesh& m) {
  std::string out = "element,n0,n1,n2,n3,layer,material\n";
  for (std::size_t e = 0; e < m.num_elements(); ++e) {
    out += std::to_string(e);
    for (int n : m.elements[e]) out += "," + std::to_string(n);
    out += "," + std::string(name_of(m.element_layer[e])) + "," + std::string(name_of(m.element_material[e])) + "\n";
  }
  return out;
}

/// node,ux,uy
inline std::string displacement_csv(const fe::SolveState& s) {
  std::string out = "node,ux,uy\n";
  for (Eigen::Index i = 0; 2 * i < s.displacement.size(); ++i)
    out += std::to_string(i) + "," + format_double(s.displacement(2 * i)) + "," +
           format_double(s.displacement(2 * i + 1)) + "\n";
  return out;
}

/// One row per quadrature point with the Cauchy stress, first principal
/// stress and current area weight.
inline std::string gauss_stress_csv(const CrossSectionMesh& m, const fe::SolveState& s) {
  std::string out = "element,gp,layer,material,sxx,syy,sxy,szz,p1,area\n";
  for (std::size_t e = 0; e < m.num_elements(); ++e) {
    for (std::size_t g = 0; g < 4; ++g) {
      const auto& gp = s.gauss[e][g];
      out += std::to_string(e) + "," + std::to_string(g) + "," + std::string(name_of(m.element_layer[e])) + "," +
             std::string(name_of(m.element_material[e])) + "," + format_double(gp.stress(0, 0)) + "," +
             format_double(gp.stress(1, 1)) + "," + format_double(gp.stress(0, 1)) + "," +
             format_double(gp.stress(2, 2)) + "," + format_double(first_principal(gp.stress)) + "," +
             format_double(gp.area) + "\n";
    }
  }
  return out;
}

/// Reads the layer, p1 and area columns of gauss_stress_csv output.
struct GaussStressRow {
  int element = 0;
  Layer layer = Layer::Intima;
  Tissue material = Tissue::NormalIntima;
  double p1 = 0.0;
  double area = 0.0;
};

inline std::vector<GaussStressRow> parse_gauss_stress_csv(std::string_view content, std::string_view file) {
  const auto t = text::parse_csv(content, file);
  const auto ce = t.column("element", file);
  const auto cl = t.column("layer", file);
  const auto cm = t.column("material", file);
  const auto cp = t.column("p1", file);
  const auto ca = t.column("area", file);
  std::vector<GaussStressRow> out;
  for (const auto& row : t.rows) {
    GaussStressRow r;
    r.element = text::parse_int<int>(row[ce], "element");
    if (row[cl] == "intima") r.layer = Layer::Intima;
    else if (row[cl] == "media") r.layer = Layer::Media;
    else if (row[cl] == "adventitia") r.layer = Layer::Adventitia;
    else throw Error(ErrorCode::InvariantViolation, std::string(file) + ": unknown layer '" + row[cl] + "'");
    const auto mat = tissue_from_name(row[cm]);
    if (!mat) throw Error(ErrorCode::InvariantViolation, std::string(file) + ": unknown material '" + row[cm] + "'");
    r.material = *mat;
    r.p1 = text::parse_double(row[cp], "p1");
    r.area = text::parse_double(row[ca], "area");
    out.push_back(r);
  }
  return out;
}

/// Legacy VTK unstructured grid (quads, cell type 9). Nodes are displaced by
/// `u` when given; cell data carries layer, material and, with a state, the
/// element-mean first principal stress.
inline std::string vtk(const CrossSectionMesh& m, const fe::SolveState* state = nullptr) {
  std::string out = "# vtk DataFile Version 3.0\ncross-section mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out += "POINTS " + std::to_string(m.num_nodes()) + " double\n";
  for (std::size_t i = 0; i < m.num_nodes(); ++i) {
    Point2 p = m.nodes[i];
    if (state) p += Point2(state->displacement(2 * static_cast<Eigen::Index>(i)),
                           state->displacement(2 * static_cast<Eigen::Index>(i) + 1));
    out += format_double(p.x()) + " " + format_double(p.y()) + " 0\n";
  }
  out += "CELLS " + std::to_string(m.num_elements()) + " " + std::to_string(5 * m.num_elements()) + "\n";
  for (const auto& c : m.elements)
    out += "4 " + std::to_string(c[0]) + " " + std::to_string(c[1]) + " " + std::to_string(c[2]) + " " +
           std::to_string(c[3]) + "\n";
  out += "CELL_TYPES " + std::to_string(m.num_elements()) + "\n";
  for (std::size_t e = 0; e < m.num_elements(); ++e) out += "9\n";
  out += "CELL_DATA " + std::to_string(m.num_elements()) + "\n";
  out += "SCALARS layer int 1\nLOOKUP_TABLE default\n";
  for (auto l : m.element_layer) out += std::to_string(static_cast<int>(l)) + "\n";
  out += "SCALARS material int 1\nLOOKUP_TABLE default\n";
  for (auto t : m.element_material) out += std::to_string(static_cast<int>(t)) + "\n";
  if (state && !state->gauss.empty()) {
    out += "SCALARS p1_kpa double 1\nLOOKUP_TABLE default\n";
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
      double num = 0.0;
      double den = 0.0;
      for (const auto& gp : state->gauss[e]) {
        num += first_principal(gp.stress) * gp.area;
        den += gp.area;
      }
      out += format_double(num / den) + "\n";
    }
  }
  return out;
}

/// phase,step,load_param,pressure,mean_radius,halvings,augmentations,iterations,residuals(;-separated)
inline std::string newton_trace(const fe::ProgramResult& r) {
  std::string out = "phase,step,load_param,pressure_kpa,mean_radius_mm,halvings,augmentations,evaluations,residuals\n";
  for (const auto& s : r.trace) {
    out += std::to_string(s.phase) + "," + std::to_string(s.step) + "," + format_double(s.load_param) + "," +
           format_double(s.pressure) + "," + format_double(s.mean_radius) + "," + std::to_string(s.halvings) + "," +
           std::to_string(s.augmentations) + "," + std::to_string(s.residuals.size()) + ",";
    for (std::size_t i = 0; i < s.residuals.size(); ++i) out += (i ? ";" : "") + format_double(s.residuals[i]);
    out += "\n";
  }
  return out;
}

/// mesh quality as key,value lines
inline std::string quality_csv_row(int slice, const MeshQuality& q) {
  return std::to_string(slice) + "," + format_double(q.min_jacobian) + "," + format_double(q.max_aspect_ratio) + "," +
         format_double(q.total_area) + "\n";
}

}  // namespace plaquemech::io
