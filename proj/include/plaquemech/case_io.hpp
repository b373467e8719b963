#pragma once

// Case bundle: the on-disk input of one lesion.
//
//   volume.hdr     three lines: `dims nx ny nz`, `spacing sx sy sz`, `origin ox oy oz`
//   volume.raw     nx*ny*nz little-endian int16 HU values, x fastest
//   mask.raw       nx*ny*nz uint8 intima flags (0 or 1)
//   centerline.csv s,x,y,z,tx,ty,tz
//   contours.csv   slice,kind,index,u,v     (kind = lumen | outer, in-slice coordinates)
//   profiles.csv   s,d_pre,d_post,d_followup,in_stent   (empty field = missing)
//   config.txt     key = value overrides (may be empty)
//
// Voxel (i,j,k) has its center at origin + (i*sx, j*sy, k*sz).

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plaquemech/config.hpp"
#include "plaquemech/error.hpp"
#include "plaquemech/geometry.hpp"
#include "plaquemech/mesh.hpp"
#include "plaquemech/profile.hpp"
#include "plaquemech/text.hpp"

namespace plaquemech {

using Vec3d = Eigen::Vector3d;

struct HuVolume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm/voxel
  std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm
  std::vector<std::int16_t> values;

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims[0]) +
           static_cast<std::size_t>(i);
  }
  Vec3d voxel_center(std::size_t flat) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    const auto i = static_cast<double>(flat % nx);
    const auto j = static_cast<double>((flat / nx) % ny);
    const auto k = static_cast<double>(flat / (nx * ny));
    return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw Error(ErrorCode::InvariantViolation, "volume.dims[" + std::to_string(a) + "] must be > 0");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw Error(ErrorCode::InvariantViolation, "volume.spacing[" + std::to_string(a) + "] must be > 0");
      if (!std::isfinite(origin[a]))
        throw Error(ErrorCode::InvariantViolation, "volume.origin[" + std::to_string(a) + "] must be finite");
    }
    if (values.size() != size()) throw Error(ErrorCode::InvariantViolation, "volume.values size differs from dims");
  }

  bool operator==(const HuVolume&) const = default;
};

struct IntimaMask {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> flags;

  bool operator==(const IntimaMask&) const = default;
};

struct CenterlinePoint {
  double s = 0.0;
  Vec3d position = Vec3d::Zero();
  Vec3d tangent = Vec3d::UnitZ();

  bool operator==(const CenterlinePoint&) const = default;
};

struct Centerline {
  std::vector<CenterlinePoint> points;

  std::size_t size() const { return points.size(); }
  bool operator==(const Centerline&) const = default;
};

struct SliceContour {
  Polyline lumen;
  Polyline outer;  // intima-outer contour

  bool operator==(const SliceContour&) const = default;
};

struct SliceContours {
  std::vector<SliceContour> slices;

  bool operator==(const SliceContours&) const = default;
};

struct CaseBundle {
  HuVolume volume;
  IntimaMask mask;
  Centerline centerline;
  SliceContours contours;
  CenterlineProfile profiles;
  RunConfig config;
  std::string config_text;  // the bundle's own config.txt, verbatim

  std::size_t num_slices() const { return centerline.size(); }
};

/// Orthonormal in-slice basis (e1, e2) for a unit tangent t: e1 is the
/// projection of (0,0,1) onto the plane, or of (1,0,0) when |t.z| > 0.99;
/// e2 = t x e1.
struct SliceFrame {
  Vec3d origin;
  Vec3d tangent;
  Vec3d e1;
  Vec3d e2;

  Point2 to_slice(const Vec3d& p) const {
    const Vec3d d = p - origin;
    return {d.dot(e1), d.dot(e2)};
  }
  double offset(const Vec3d& p) const { return (p - origin).dot(tangent); }
};

inline SliceFrame slice_frame(const CenterlinePoint& cp) {
  SliceFrame f;
  f.origin = cp.position;
  f.tangent = cp.tangent;
  const Vec3d ref = std::abs(cp.tangent.z()) > 0.99 ? Vec3d::UnitX() : Vec3d::UnitZ();
  f.e1 = (ref - ref.dot(cp.tangent) * cp.tangent).normalized();
  f.e2 = cp.tangent.cross(f.e1);
  return f;
}

/// Checks every type invariant and all cross-file counts.
inline void validate_bundle(const CaseBundle& b) {
  b.volume.validate();
  if (b.mask.dims != b.volume.dims) throw Error(ErrorCode::HeaderMismatch, "mask dims differ from volume dims");
  if (b.mask.flags.size() != b.volume.size()) throw Error(ErrorCode::HeaderMismatch, "mask size differs from volume");
  bool any = false;
  for (std::size_t i = 0; i < b.mask.flags.size(); ++i) {
    const auto f = b.mask.flags[i];
    if (f > 1) throw Error(ErrorCode::InvariantViolation, "mask.flags[" + std::to_string(i) + "] is not 0 or 1");
    any = any || f == 1;
  }
  if (!any) throw Error(ErrorCode::InvariantViolation, "mask.flags: no voxel flagged");

  const auto& pts = b.centerline.points;
  if (pts.empty()) throw Error(ErrorCode::InvariantViolation, "centerline: no points");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::string at = "[" + std::to_string(i) + "]";
    if (i == 0 && pts[i].s != 0.0) throw Error(ErrorCode::InvariantViolation, "centerline.s" + at + " must be 0");
    if (i > 0 && !(pts[i].s > pts[i - 1].s))
      throw Error(ErrorCode::InvariantViolation, "centerline.s" + at + " not strictly increasing");
    if (!pts[i].position.allFinite()) throw Error(ErrorCode::InvariantViolation, "centerline.position" + at);
    if (!(std::abs(pts[i].tangent.norm() - 1.0) <= 1e-9))
      throw Error(ErrorCode::InvariantViolation, "centerline.tangent" + at + " is not unit length");
  }

  if (b.contours.slices.size() != pts.size())
    throw Error(ErrorCode::InvariantViolation, "contours: slice count differs from centerline");
  for (std::size_t i = 0; i < b.contours.slices.size(); ++i) {
    const auto& c = b.contours.slices[i];
    const std::string at = "contours[" + std::to_string(i) + "]";
    if (c.lumen.size() < 8 || c.outer.size() < 8)
      throw Error(ErrorCode::InvariantViolation, at + ": contours need at least 8 points");
    try {
      validate_contour_pair(c.lumen, c.outer, at);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvariantViolation, e.what());
    }
  }

  if (b.profiles.size() != pts.size())
    throw Error(ErrorCode::InvariantViolation, "profiles: sample count differs from centerline");
  for (std::size_t i = 0; i < b.profiles.size(); ++i) {
    const auto& p = b.profiles.samples[i];
    const std::string at = "[" + std::to_string(i) + "]";
    if (!(std::abs(p.s - pts[i].s) <= 1e-9 * std::max(1.0, std::abs(pts[i].s))))
      throw Error(ErrorCode::InvariantViolation, "profiles.s" + at + " differs from centerline.s");
    for (const auto& [d, name] : {std::pair{p.d_pre, "d_pre"}, {p.d_post, "d_post"}, {p.d_followup, "d_followup"}})
      if (d && !(*d > 0.0 && std::isfinite(*d)))
        throw Error(ErrorCode::InvariantViolation, std::string("profiles.") + name + at + " must be > 0");
  }
}

namespace detail {

inline std::array<double, 3> parse_triple(const std::vector<std::string_view>& f, std::string_view what) {
  std::array<double, 3> out{};
  for (int a = 0; a < 3; ++a)
    out[static_cast<std::size_t>(a)] =
        text::parse_double(f[static_cast<std::size_t>(a) + 1], what, ErrorCode::HeaderMismatch);
  return out;
}

inline void parse_header(std::string_view content, HuVolume& v) {
  bool seen[3] = {false, false, false};
  for (auto line : text::split(content, '\n')) {
    line = text::trim(line);
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    for (auto tok : text::split(line, ' '))
      if (!text::trim(tok).empty()) f.push_back(text::trim(tok));
    if (f.size() != 4) throw Error(ErrorCode::HeaderMismatch, "volume.hdr: malformed line '" + std::string(line) + "'");
    if (f[0] == "dims") {
      for (int a = 0; a < 3; ++a)
        v.dims[static_cast<std::size_t>(a)] =
            text::parse_int<int>(f[static_cast<std::size_t>(a) + 1], "volume.hdr dims", ErrorCode::HeaderMismatch);
      seen[0] = true;
    } else if (f[0] == "spacing") {
      v.spacing = parse_triple(f, "volume.hdr spacing");
      seen[1] = true;
    } else if (f[0] == "origin") {
      v.origin = parse_triple(f, "volume.hdr origin");
      seen[2] = true;
    } else {
      throw Error(ErrorCode::HeaderMismatch, "volume.hdr: unknown field '" + std::string(f[0]) + "'");
    }
  }
  if (!seen[0] || !seen[1] || !seen[2]) throw Error(ErrorCode::HeaderMismatch, "volume.hdr: missing field");
  for (int a = 0; a < 3; ++a) {
    if (v.dims[static_cast<std::size_t>(a)] <= 0) throw Error(ErrorCode::HeaderMismatch, "volume.hdr: dims must be > 0");
    if (!(v.spacing[static_cast<std::size_t>(a)] > 0.0) || !std::isfinite(v.spacing[static_cast<std::size_t>(a)]))
      throw Error(ErrorCode::HeaderMismatch, "volume.hdr: spacing must be > 0");
    if (!std::isfinite(v.origin[static_cast<std::size_t>(a)]))
      throw Error(ErrorCode::HeaderMismatch, "volume.hdr: origin must be finite");
  }
  const double total = static_cast<double>(v.dims[0]) * v.dims[1] * v.dims[2];
  if (total > 1e9) throw Error(ErrorCode::HeaderMismatch, "volume.hdr: dims too large");
}

inline std::optional<double> parse_optional(const std::string& field, const std::string& what) {
  if (text::trim(field).empty()) return std::nullopt;
  return text::parse_double(field, what);
}

inline std::string format_optional(const std::optional<double>& v) { return v ? text::format_double(*v) : ""; }

}  // namespace detail

/// profiles.csv: s,d_pre,d_post,d_followup,in_stent (empty field = missing).
inline CenterlineProfile read_profiles(const std::filesystem::path& path) {
  const std::string file = path.filename().string();
  const auto t = text::read_csv(path);
  const std::size_t cs = t.column("s", file);
  const std::size_t c_pre = t.column("d_pre", file);
  const std::size_t c_post = t.column("d_post", file);
  const std::size_t c_fu = t.column("d_followup", file);
  const std::size_t c_in = t.column("in_stent", file);
  CenterlineProfile out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string at = file + " row " + std::to_string(r);
    ProfileSample p;
    p.s = text::parse_double(row[cs], at + " s");
    p.d_pre = detail::parse_optional(row[c_pre], at + " d_pre");
    p.d_post = detail::parse_optional(row[c_post], at + " d_post");
    p.d_followup = detail::parse_optional(row[c_fu], at + " d_followup");
    if (row[c_in] == "1") p.in_stent = true;
    else if (row[c_in] == "0") p.in_stent = false;
    else throw Error(ErrorCode::InvariantViolation, at + ": in_stent must be 0 or 1");
    out.samples.push_back(p);
  }
  return out;
}

inline std::string profiles_csv(const CenterlineProfile& profile) {
  std::string pr = "s,d_pre,d_post,d_followup,in_stent\n";
  for (const auto& p : profile.samples)
    pr += text::format_double(p.s) + "," + detail::format_optional(p.d_pre) + "," + detail::format_optional(p.d_post) +
          "," + detail::format_optional(p.d_followup) + "," + (p.in_stent ? "1" : "0") + "\n";
  return pr;
}

/// Reads and validates a bundle. The bundle's config.txt is applied on top
/// of the defaults.
inline CaseBundle load_case(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* name :
       {"volume.hdr", "volume.raw", "mask.raw", "centerline.csv", "contours.csv", "profiles.csv", "config.txt"})
    if (!fs::is_regular_file(dir / name)) throw Error(ErrorCode::MissingFile, (dir / name).string());

  CaseBundle b;
  detail::parse_header(text::read_file(dir / "volume.hdr"), b.volume);
  const std::size_t n = b.volume.size();

  const std::string raw = text::read_file(dir / "volume.raw");
  if (raw.size() != 2 * n)
    throw Error(ErrorCode::HeaderMismatch, "volume.raw has " + std::to_string(raw.size()) + " bytes, header implies " +
                                               std::to_string(2 * n));
  b.volume.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = static_cast<std::uint16_t>(static_cast<unsigned char>(raw[2 * i]));
    const auto hi = static_cast<std::uint16_t>(static_cast<unsigned char>(raw[2 * i + 1]));
    b.volume.values[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
  }

  const std::string mask = text::read_file(dir / "mask.raw");
  if (mask.size() != n)
    throw Error(ErrorCode::HeaderMismatch, "mask.raw has " + std::to_string(mask.size()) + " bytes, header implies " +
                                               std::to_string(n));
  b.mask.dims = b.volume.dims;
  b.mask.flags.assign(mask.begin(), mask.end());

  {
    const auto t = text::read_csv(dir / "centerline.csv");
    const std::size_t cs = t.column("s", "centerline.csv");
    const std::array<std::size_t, 3> cp{t.column("x", "centerline.csv"), t.column("y", "centerline.csv"),
                                        t.column("z", "centerline.csv")};
    const std::array<std::size_t, 3> ct{t.column("tx", "centerline.csv"), t.column("ty", "centerline.csv"),
                                        t.column("tz", "centerline.csv")};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      const std::string at = "centerline.csv row " + std::to_string(r);
      CenterlinePoint p;
      p.s = text::parse_double(row[cs], at + " s");
      for (int a = 0; a < 3; ++a) {
        p.position(a) = text::parse_double(row[cp[static_cast<std::size_t>(a)]], at + " position");
        p.tangent(a) = text::parse_double(row[ct[static_cast<std::size_t>(a)]], at + " tangent");
      }
      b.centerline.points.push_back(p);
    }
  }

  {
    const auto t = text::read_csv(dir / "contours.csv");
    const std::size_t c_slice = t.column("slice", "contours.csv");
    const std::size_t c_kind = t.column("kind", "contours.csv");
    const std::size_t c_index = t.column("index", "contours.csv");
    const std::size_t c_u = t.column("u", "contours.csv");
    const std::size_t c_v = t.column("v", "contours.csv");
    b.contours.slices.resize(b.centerline.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      const std::string at = "contours.csv row " + std::to_string(r);
      const auto slice = text::parse_int<long>(row[c_slice], at + " slice");
      if (slice < 0 || static_cast<std::size_t>(slice) >= b.contours.slices.size())
        throw Error(ErrorCode::InvariantViolation, at + ": slice index out of range");
      auto& sc = b.contours.slices[static_cast<std::size_t>(slice)];
      Polyline* poly = nullptr;
      if (row[c_kind] == "lumen") poly = &sc.lumen;
      else if (row[c_kind] == "outer") poly = &sc.outer;
      else throw Error(ErrorCode::InvariantViolation, at + ": kind must be lumen or outer");
      const auto index = text::parse_int<long>(row[c_index], at + " index");
      if (index != static_cast<long>(poly->size()))
        throw Error(ErrorCode::InvariantViolation, at + ": contour points must be listed in index order");
      poly->emplace_back(text::parse_double(row[c_u], at + " u"), text::parse_double(row[c_v], at + " v"));
    }
  }

  b.profiles = read_profiles(dir / "profiles.csv");
  b.config_text = text::read_file(dir / "config.txt");
  b.config.apply_text(b.config_text, "config.txt");
  b.config.validate();
  validate_bundle(b);
  return b;
}

/// Writes the bundle; load_case(dir) reproduces it exactly (numbers are
/// written in shortest round-trip form).
inline void save_case(const CaseBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::IoFailure, "cannot create directory " + dir.string());
  using text::format_double;

  const auto& v = b.volume;
  text::write_file(dir / "volume.hdr", "dims " + std::to_string(v.dims[0]) + " " + std::to_string(v.dims[1]) + " " +
                                           std::to_string(v.dims[2]) + "\nspacing " + format_double(v.spacing[0]) +
                                           " " + format_double(v.spacing[1]) + " " + format_double(v.spacing[2]) +
                                           "\norigin " + format_double(v.origin[0]) + " " +
                                           format_double(v.origin[1]) + " " + format_double(v.origin[2]) + "\n");
  std::string raw(2 * v.values.size(), '\0');
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(v.values[i]);
    raw[2 * i] = static_cast<char>(u & 0xFF);
    raw[2 * i + 1] = static_cast<char>(u >> 8);
  }
  text::write_file(dir / "volume.raw", raw);
  text::write_file(dir / "mask.raw", std::string(b.mask.flags.begin(), b.mask.flags.end()));

  std::string cl = "s,x,y,z,tx,ty,tz\n";
  for (const auto& p : b.centerline.points) {
    cl += format_double(p.s);
    for (int a = 0; a < 3; ++a) cl += "," + format_double(p.position(a));
    for (int a = 0; a < 3; ++a) cl += "," + format_double(p.tangent(a));
    cl += "\n";
  }
  text::write_file(dir / "centerline.csv", cl);

  std::string ct = "slice,kind,index,u,v\n";
  for (std::size_t s = 0; s < b.contours.slices.size(); ++s) {
    const auto& sc = b.contours.slices[s];
    for (const auto& [poly, kind] : {std::pair{&sc.lumen, "lumen"}, {&sc.outer, "outer"}})
      for (std::size_t i = 0; i < poly->size(); ++i)
        ct += std::to_string(s) + "," + kind + "," + std::to_string(i) + "," + format_double((*poly)[i].x()) + "," +
              format_double((*poly)[i].y()) + "\n";
  }
  text::write_file(dir / "contours.csv", ct);

  text::write_file(dir / "profiles.csv", profiles_csv(b.profiles));
  text::write_file(dir / "config.txt", b.config_text);
}

struct SliceSample {
  Point2 position;  // in-slice coordinates, mm
  std::int16_t hu = 0;
  std::size_t voxel = 0;  // flat voxel index

  bool operator==(const SliceSample&) const = default;
};

/// Masked voxels whose centers lie within half the largest voxel spacing of
/// the slice plane, -h <= offset < h (half-open so that adjacent slices at
/// least 2h apart never share a voxel). Ordered by flat voxel index.
inline std::vector<SliceSample> slice_samples(const CaseBundle& b, std::size_t slice_index) {
  if (slice_index >= b.num_slices())
    throw Error(ErrorCode::IndexOutOfRange, "slice " + std::to_string(slice_index) + " of " +
                                                std::to_string(b.num_slices()));
  const SliceFrame frame = slice_frame(b.centerline.points[slice_index]);
  const double h = 0.5 * std::max({b.volume.spacing[0], b.volume.spacing[1], b.volume.spacing[2]});
  std::vector<SliceSample> out;
  for (std::size_t i = 0; i < b.mask.flags.size(); ++i) {
    if (b.mask.flags[i] == 0) continue;
    const Vec3d p = b.volume.voxel_center(i);
    const double d = frame.offset(p);
    if (d >= -h && d < h) out.push_back({frame.to_slice(p), b.volume.values[i], i});
  }
  return out;
}

}  // namespace plaquemech
