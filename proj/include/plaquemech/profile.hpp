#pragma once

#include <optional>
#include <vector>

namespace plaquemech {

/// Diameters along the centerline, one sample per slice. Any diameter may be
/// missing (empty CSV field).
struct ProfileSample {
  double s = 0.0;  // mm
  std::optional<double> d_pre;
  std::optional<double> d_post;
  std::optional<double> d_followup;
  bool in_stent = false;

  bool operator==(const ProfileSample&) const = default;
};

struct CenterlineProfile {
  std::vector<ProfileSample> samples;

  std::size_t size() const { return samples.size(); }
  bool operator==(const CenterlineProfile&) const = default;
};

}  // namespace plaquemech
