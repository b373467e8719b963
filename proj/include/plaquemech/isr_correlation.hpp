#pragma once

// Restenosis from diameter profiles and its Pearson correlation with the
// per-slice stress statistics, including the threshold sweep.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "plaquemech/error.hpp"
#include "plaquemech/profile.hpp"
#include "plaquemech/stress_analysis.hpp"
#include "plaquemech/text.hpp"

namespace plaquemech {

/// Uniform scaling so that raw[reference_index] maps to reference_mm. The
/// reference entry is set to reference_mm exactly, making the map idempotent.
inline std::vector<double> rescale_diameters(const std::vector<double>& raw, std::size_t reference_index,
                                             double reference_mm) {
  if (reference_index >= raw.size()) throw Error(ErrorCode::IndexOutOfRange, "reference index outside the profile");
  const double r = raw[reference_index];
  if (!(r > 0.0) || !std::isfinite(r)) throw Error(ErrorCode::ZeroReference, "reference diameter must be > 0");
  if (!(reference_mm > 0.0)) throw Error(ErrorCode::ZeroReference, "physical reference diameter must be > 0");
  const double scale = reference_mm / r;
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * scale;
  out[reference_index] = reference_mm;
  return out;
}

/// Rescales each diameter series of the profile separately (each comes from
/// its own angiogram). Missing entries stay missing; a series that is
/// missing at the reference index is left untouched.
inline CenterlineProfile rescale_profile(const CenterlineProfile& p, std::size_t reference_index,
                                         double reference_mm) {
  CenterlineProfile out = p;
  auto series = [&](std::optional<double> ProfileSample::*field) {
    if (reference_index >= p.size()) throw Error(ErrorCode::IndexOutOfRange, "reference index outside the profile");
    const auto& ref = p.samples[reference_index].*field;
    if (!ref) return;
    std::vector<double> raw;
    for (const auto& s : p.samples) raw.push_back((s.*field).value_or(0.0));
    const auto scaled = rescale_diameters(raw, reference_index, reference_mm);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p.samples[i].*field) out.samples[i].*field = scaled[i];
  };
  series(&ProfileSample::d_pre);
  series(&ProfileSample::d_post);
  series(&ProfileSample::d_followup);
  return out;
}

/// 100 (1 - d_followup / d_post), clamped below at 0.
inline double restenosis_percent(double d_post, double d_followup) {
  if (!(d_post > 0.0) || !(d_followup > 0.0)) throw Error(ErrorCode::MissingDiameter, "diameters must be > 0");
  return std::max(0.0, 100.0 * (1.0 - d_followup / d_post));
}

/// Per-slice restenosis; empty for slices outside the stent. In strict mode
/// a missing in-stent diameter raises MissingDiameter, otherwise the slice
/// is left empty (and reported as skipped by the caller).
inline std::vector<std::optional<double>> restenosis_percent(const CenterlineProfile& p, bool strict = true) {
  std::vector<std::optional<double>> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& s = p.samples[i];
    if (!s.in_stent) continue;
    if (!s.d_post || !s.d_followup) {
      if (strict) throw Error(ErrorCode::MissingDiameter, "slice " + std::to_string(i));
      continue;
    }
    out[i] = restenosis_percent(*s.d_post, *s.d_followup);
  }
  return out;
}

/// Sample Pearson correlation (two-pass), clamped to [-1, 1].
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 3) throw Error(ErrorCode::PreconditionViolation, "pearson needs at least 3 points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::ConstantInput, "pearson of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// One in-stent slice of the correlation table.
struct CorrelationRow {
  std::string case_id;
  int slice_index = 0;
  double restenosis = 0.0;  // %
  SliceStressSummary stress;
};

struct SweepPoint {
  double tau = 0.0;
  std::optional<double> r;  // empty when a column is constant
};

struct CorrelationReport {
  std::optional<double> r_mean;
  std::optional<double> r_p95;
  std::vector<SweepPoint> sweep;
  std::optional<double> argmax_tau;
  std::size_t n_points = 0;
  std::vector<CorrelationRow> rows;  // sorted by (case_id, slice_index)
  std::vector<std::string> skipped;  // "case:slice: reason"
};

namespace detail {

inline std::optional<double> pearson_or_missing(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return pearson(x, y);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConstantInput) return std::nullopt;
    throw;
  }
}

}  // namespace detail

/// Pearson r of each stress statistic against restenosis over the rows. The
/// rows are put into a canonical order (by value) before any summation, so
/// the report does not depend on input order. argmax ties go to the lower tau.
inline CorrelationReport threshold_sweep(std::vector<CorrelationRow> rows, const std::vector<double>& tau_grid) {
  if (tau_grid.empty()) throw Error(ErrorCode::PreconditionViolation, "empty threshold grid");
  if (rows.size() < 3) throw Error(ErrorCode::PreconditionViolation, "correlation needs at least 3 in-stent slices");

  CorrelationReport rep;
  rep.n_points = rows.size();
  std::vector<const CorrelationRow*> canon;
  for (const auto& r : rows) canon.push_back(&r);
  std::sort(canon.begin(), canon.end(), [&](const CorrelationRow* a, const CorrelationRow* b) {
    const auto key = [&](const CorrelationRow* r) {
      return std::tie(r->restenosis, r->stress.mean_p1, r->stress.p95_p1, r->stress.fractions);
    };
    return key(a) < key(b);
  });
  std::vector<double> y;
  std::vector<double> xm;
  std::vector<double> xp;
  for (const auto* r : canon) {
    y.push_back(r->restenosis);
    xm.push_back(r->stress.mean_p1);
    xp.push_back(r->stress.p95_p1);
  }
  rep.r_mean = detail::pearson_or_missing(xm, y);
  rep.r_p95 = detail::pearson_or_missing(xp, y);
  std::vector<double> grid = tau_grid;
  std::sort(grid.begin(), grid.end());
  double best = 0.0;
  for (double tau : grid) {
    std::vector<double> xf;
    for (const auto* r : canon) xf.push_back(r->stress.fraction_above(tau));
    SweepPoint pt{tau, detail::pearson_or_missing(xf, y)};
    if (pt.r && (!rep.argmax_tau || *pt.r > best)) {
      rep.argmax_tau = tau;
      best = *pt.r;
    }
    rep.sweep.push_back(pt);
  }
  std::sort(rows.begin(), rows.end(), [](const CorrelationRow& a, const CorrelationRow& b) {
    return std::tie(a.case_id, a.slice_index) < std::tie(b.case_id, b.slice_index);
  });
  rep.rows = std::move(rows);
  return rep;
}

/// Joins summaries with restenosis by slice index, keeping in-stent slices
/// with a restenosis value; others are listed in `skipped`.
inline std::vector<CorrelationRow> correlation_rows(const std::string& case_id,
                                                    const std::vector<SliceStressSummary>& summaries,
                                                    const CenterlineProfile& profile,
                                                    std::vector<std::string>* skipped = nullptr) {
  const auto rest = restenosis_percent(profile, false);
  std::vector<CorrelationRow> out;
  for (const auto& s : summaries) {
    const auto idx = static_cast<std::size_t>(s.slice_index);
    if (s.slice_index < 0 || idx >= profile.size())
      throw Error(ErrorCode::IndexOutOfRange, case_id + ": summary slice outside profile");
    if (!profile.samples[idx].in_stent) continue;
    if (!rest[idx]) {
      if (skipped) skipped->push_back(case_id + ":" + std::to_string(s.slice_index) + ": missing diameter");
      continue;
    }
    out.push_back({case_id, s.slice_index, *rest[idx], s});
  }
  return out;
}

/// Per-case centering of restenosis and every stress statistic (subtracts
/// the case mean), removing per-case offsets before pooling.
inline std::vector<CorrelationRow> center_per_case(std::vector<CorrelationRow> rows) {
  std::vector<std::string> ids;
  for (const auto& r : rows)
    if (std::find(ids.begin(), ids.end(), r.case_id) == ids.end()) ids.push_back(r.case_id);
  for (const auto& id : ids) {
    std::vector<CorrelationRow*> group;
    for (auto& r : rows)
      if (r.case_id == id) group.push_back(&r);
    std::sort(group.begin(), group.end(),
              [](const CorrelationRow* a, const CorrelationRow* b) { return a->slice_index < b->slice_index; });
    const auto n = static_cast<double>(group.size());
    auto center = [&](auto get) {
      double m = 0.0;
      for (auto* r : group) m += get(*r);
      m /= n;
      for (auto* r : group) get(*r) -= m;
    };
    center([](CorrelationRow& r) -> double& { return r.restenosis; });
    center([](CorrelationRow& r) -> double& { return r.stress.mean_p1; });
    center([](CorrelationRow& r) -> double& { return r.stress.p95_p1; });
    for (std::size_t k = 0; k < group.front()->stress.fractions.size(); ++k)
      center([k](CorrelationRow& r) -> double& { return r.stress.fractions[k]; });
  }
  return rows;
}

inline std::string optional_field(const std::optional<double>& v) { return v ? text::format_double(*v) : ""; }

/// Sweep table: tau,r (empty r = undefined).
inline std::string sweep_csv(const CorrelationReport& rep) {
  std::string out = "tau_kpa,r\n";
  for (const auto& p : rep.sweep) out += text::format_double(p.tau) + "," + optional_field(p.r) + "\n";
  return out;
}

/// Per-slice table: case,slice,restenosis,mean_p1,p95_p1,frac_<tau>...
inline std::string rows_csv(const CorrelationReport& rep, const std::vector<double>& tau_grid) {
  std::string out = "case,slice,restenosis_pct,mean_p1,p95_p1";
  for (double t : tau_grid) out += ",frac_" + text::format_double(t);
  out += "\n";
  for (const auto& r : rep.rows) {
    out += r.case_id + "," + std::to_string(r.slice_index) + "," + text::format_double(r.restenosis) + "," +
           text::format_double(r.stress.mean_p1) + "," + text::format_double(r.stress.p95_p1);
    for (double t : tau_grid) out += "," + text::format_double(r.stress.fraction_above(t));
    out += "\n";
  }
  return out;
}

inline nlohmann::ordered_json report_json(const CorrelationReport& rep) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["n_points"] = rep.n_points;
  j["r_mean"] = opt(rep.r_mean);
  j["r_p95"] = opt(rep.r_p95);
  j["argmax_tau_kpa"] = opt(rep.argmax_tau);
  auto sweep = nlohmann::ordered_json::array();
  for (const auto& p : rep.sweep) sweep.push_back({{"tau_kpa", p.tau}, {"r", opt(p.r)}});
  j["sweep"] = sweep;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"case", r.case_id},
                    {"slice", r.slice_index},
                    {"restenosis_pct", r.restenosis},
                    {"mean_p1", r.stress.mean_p1},
                    {"p95_p1", r.stress.p95_p1}});
  j["rows"] = rows;
  j["skipped"] = rep.skipped;
  return j;
}

}  // namespace plaquemech
