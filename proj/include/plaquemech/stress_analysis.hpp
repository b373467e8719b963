#pragma once

// First principal stress and per-slice aggregation.
//
// Conventions:
//   * every quadrature point contributes its current area weight (w * detJ);
//   * quantiles are the weighted lower-edge inverse CDF: the smallest value v
//     with (area of samples <= v) >= q * total area;
//   * area fractions count samples strictly above the threshold.
// Samples are sorted by (value, area) before any summation, so results do
// not depend on element order.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "plaquemech/error.hpp"
#include "plaquemech/fe_solver.hpp"
#include "plaquemech/text.hpp"

namespace plaquemech {

/// Eigenvalues of a symmetric 3x3 tensor in descending order.
inline std::array<double, 3> principal_stresses(const Mat3& sigma) {
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (!((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale))
    throw Error(ErrorCode::NonSymmetric, "stress tensor is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> es(sigma, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();  // ascending
  return {ev(2), ev(1), ev(0)};
}

inline double first_principal(const Mat3& sigma) { return principal_stresses(sigma)[0]; }

struct StressSample {
  double value = 0.0;  // kPa
  double area = 0.0;   // mm^2

  bool operator==(const StressSample&) const = default;
};

enum class LayerFilter { All, Intima };

inline LayerFilter layer_filter_from(const std::string& name) {
  if (name == "all") return LayerFilter::All;
  if (name == "intima") return LayerFilter::Intima;
  throw Error(ErrorCode::ConfigParse, "analysis.layers: unsupported value '" + name + "'");
}

/// One sample per quadrature point of the selected elements. `keep`, when
/// given, further restricts the elements.
template <typename Keep>
std::vector<StressSample> stress_samples(const CrossSectionMesh& mesh, const fe::SolveState& state, Keep&& keep) {
  if (state.gauss.size() != mesh.num_elements())
    throw Error(ErrorCode::PreconditionViolation, "state has no quadrature fields for this mesh");
  std::vector<StressSample> out;
  out.reserve(4 * mesh.num_elements());
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    if (!keep(e)) continue;
    for (const auto& gp : state.gauss[e]) out.push_back({first_principal(gp.stress), gp.area});
  }
  return out;
}

inline std::vector<StressSample> stress_samples(const CrossSectionMesh& mesh, const fe::SolveState& state,
                                                LayerFilter filter = LayerFilter::All) {
  return stress_samples(mesh, state, [&](std::size_t e) {
    return filter == LayerFilter::All || mesh.element_layer[e] == Layer::Intima;
  });
}

namespace detail {

inline std::vector<StressSample> sorted(std::vector<StressSample> s) {
  std::sort(s.begin(), s.end(), [](const StressSample& a, const StressSample& b) {
    return a.value != b.value ? a.value < b.value : a.area < b.area;
  });
  return s;
}

/// Lower-edge weighted quantile over samples already sorted by value.
inline double sorted_quantile(const std::vector<StressSample>& s, double total, double q) {
  double cum = 0.0;
  for (const auto& x : s) {
    cum += x.area;
    if (cum >= q * total) return x.value;
  }
  return s.back().value;
}

inline double total_area(const std::vector<StressSample>& s) {
  double a = 0.0;
  for (const auto& x : s) a += x.area;
  return a;
}

}  // namespace detail

inline double weighted_quantile(const std::vector<StressSample>& samples, double q) {
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty field");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::PreconditionViolation, "quantile must lie in (0, 1]");
  const auto s = detail::sorted(samples);
  return detail::sorted_quantile(s, detail::total_area(s), q);
}

struct SliceStressSummary {
  int slice_index = 0;
  double mean_p1 = 0.0;  // kPa
  double p95_p1 = 0.0;   // kPa
  std::vector<double> thresholds;  // kPa, ascending
  std::vector<double> fractions;   // area fraction with p1 > threshold
  double total_area = 0.0;         // mm^2

  /// Fraction above `tau`; tau must be one of the summary thresholds.
  double fraction_above(double tau) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (thresholds[i] == tau) return fractions[i];
    throw Error(ErrorCode::PreconditionViolation, "threshold " + text::format_double(tau) + " not in summary");
  }

  bool operator==(const SliceStressSummary&) const = default;
};

/// Area-weighted statistics of a sample field.
inline SliceStressSummary summarize(const std::vector<StressSample>& samples, const std::vector<double>& thresholds,
                                    int slice_index = 0) {
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "no stress samples");
  const auto s = detail::sorted(samples);
  SliceStressSummary out;
  out.slice_index = slice_index;
  out.total_area = detail::total_area(s);
  if (!(out.total_area > 0.0)) throw Error(ErrorCode::PreconditionViolation, "stress field has zero area");
  double integral = 0.0;
  for (const auto& x : s) integral += x.value * x.area;
  out.mean_p1 = integral / out.total_area;
  out.p95_p1 = detail::sorted_quantile(s, out.total_area, 0.95);
  out.thresholds = thresholds;
  std::sort(out.thresholds.begin(), out.thresholds.end());
  for (double tau : out.thresholds) {
    // area strictly above tau: suffix of the sorted samples
    const auto it = std::upper_bound(s.begin(), s.end(), tau,
                                     [](double t, const StressSample& x) { return t < x.value; });
    double above = 0.0;
    for (auto j = it; j != s.end(); ++j) above += j->area;
    out.fractions.push_back(above / out.total_area);
  }
  return out;
}

inline SliceStressSummary slice_summary(const CrossSectionMesh& mesh, const fe::SolveState& state,
                                        const std::vector<double>& thresholds, LayerFilter filter = LayerFilter::All,
                                        int slice_index = 0) {
  if (!state.converged) throw Error(ErrorCode::UnconvergedState, "slice " + std::to_string(slice_index));
  return summarize(stress_samples(mesh, state, filter), thresholds, slice_index);
}

/// Area-weighted quantiles over the union of all slices' samples.
inline std::pair<double, double> global_percentile_thresholds(const std::vector<std::vector<StressSample>>& fields,
                                                              std::pair<double, double> quantiles = {0.80, 0.95}) {
  std::vector<StressSample> all;
  for (const auto& f : fields) all.insert(all.end(), f.begin(), f.end());
  if (all.empty()) throw Error(ErrorCode::EmptyInput, "no stress samples in any slice");
  const auto s = detail::sorted(std::move(all));
  const double total = detail::total_area(s);
  return {detail::sorted_quantile(s, total, quantiles.first), detail::sorted_quantile(s, total, quantiles.second)};
}

/// Stress map band: 0 below the light threshold, 1 at or above it, 2 at or
/// above the dark threshold.
inline int stress_band(double p1, std::pair<double, double> thresholds) {
  if (p1 >= thresholds.second) return 2;
  if (p1 >= thresholds.first) return 1;
  return 0;
}

/// One row per slice: slice,mean_p1,p95_p1,total_area,frac_<tau>...
inline std::string summary_csv(const std::vector<SliceStressSummary>& rows, const std::vector<double>& thresholds) {
  std::string out = "slice,mean_p1,p95_p1,total_area";
  for (double t : thresholds) out += ",frac_" + text::format_double(t);
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.slice_index) + "," + text::format_double(r.mean_p1) + "," +
           text::format_double(r.p95_p1) + "," + text::format_double(r.total_area);
    for (double t : thresholds) out += "," + text::format_double(r.fraction_above(t));
    out += "\n";
  }
  return out;
}

/// Parses summary_csv output; thresholds come from the frac_ columns.
inline std::vector<SliceStressSummary> parse_summary_csv(std::string_view content, std::string_view file) {
  const auto t = text::parse_csv(content, file);
  const std::size_t c_slice = t.column("slice", file);
  const std::size_t c_mean = t.column("mean_p1", file);
  const std::size_t c_p95 = t.column("p95_p1", file);
  const std::size_t c_area = t.column("total_area", file);
  std::vector<std::pair<std::size_t, double>> frac_cols;
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i].rfind("frac_", 0) == 0)
      frac_cols.emplace_back(i, text::parse_double(std::string_view(t.header[i]).substr(5), "threshold"));
  std::vector<SliceStressSummary> out;
  for (const auto& row : t.rows) {
    SliceStressSummary s;
    s.slice_index = text::parse_int<int>(row[c_slice], "slice");
    s.mean_p1 = text::parse_double(row[c_mean], "mean_p1");
    s.p95_p1 = text::parse_double(row[c_p95], "p95_p1");
    s.total_area = text::parse_double(row[c_area], "total_area");
    for (const auto& [col, tau] : frac_cols) {
      s.thresholds.push_back(tau);
      s.fractions.push_back(text::parse_double(row[col], "fraction"));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace plaquemech
