#pragma once

// Four-component 1D Gaussian mixture over intimal HU samples.
//
// Pipeline: k-means from fixed seed means -> EM -> components relabeled by
// ascending mean, so component k is PlaqueComponent k. No randomness.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "plaquemech/case_io.hpp"
#include "plaquemech/error.hpp"
#include "plaquemech/text.hpp"
#include "plaquemech/tissue.hpp"

namespace plaquemech {

struct GaussianComponent {
  double mean = 0.0;      // HU
  double variance = 1.0;  // HU^2
  double weight = 0.25;

  bool operator==(const GaussianComponent&) const = default;
};

using MixtureInit = std::array<GaussianComponent, kNumComponents>;

struct MixtureModel {
  std::array<GaussianComponent, kNumComponents> components{};
  double log_likelihood = 0.0;  // mean per sample
  int iterations = 0;
  std::vector<double> log_likelihood_history;  // mean per sample, one per E-step

  const GaussianComponent& operator[](PlaqueComponent c) const { return components[index_of(c)]; }
  bool operator==(const MixtureModel&) const = default;
};

struct GmmSettings {
  double variance_floor = 1.0;
  double weight_epsilon = 1e-6;
  double tol = 1e-6;
  int max_iter = 500;
  int kmeans_max_iter = 100;
};

inline GmmSettings gmm_settings(const GmmConfig& c) {
  return {c.variance_floor, c.weight_epsilon, c.tol, c.max_iter, c.kmeans_max_iter};
}

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454836;

inline double log_normal(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + d * d / variance);
}

/// log(w_k N(x; mu_k, var_k)) for all k.
inline std::array<double, kNumComponents> log_joint(const MixtureModel& m, double x) {
  std::array<double, kNumComponents> out{};
  for (std::size_t k = 0; k < kNumComponents; ++k) {
    const auto& c = m.components[k];
    out[k] = std::log(c.weight) + log_normal(x, c.mean, c.variance);
  }
  return out;
}

inline double log_sum_exp(const std::array<double, kNumComponents>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Stable ordering by (mean, variance, weight).
inline void sort_components(std::array<GaussianComponent, kNumComponents>& c) {
  std::sort(c.begin(), c.end(), [](const GaussianComponent& a, const GaussianComponent& b) {
    if (a.mean != b.mean) return a.mean < b.mean;
    if (a.variance != b.variance) return a.variance < b.variance;
    return a.weight < b.weight;
  });
}

}  // namespace detail

/// Lloyd iterations from the seed means. Nearest seed wins, ties go to the
/// lower index. Empty clusters keep their seed mean with the variance floor
/// and weight epsilon; weights are renormalized afterwards.
inline MixtureInit kmeans_init(const std::vector<double>& samples, const std::array<double, kNumComponents>& seeds,
                               const GmmSettings& settings = {}) {
  if (samples.empty()) throw Error(ErrorCode::EmptySampleSet, "k-means: no samples");
  for (std::size_t k = 1; k < kNumComponents; ++k)
    if (!(seeds[k] > seeds[k - 1])) throw Error(ErrorCode::PreconditionViolation, "k-means seeds must be ascending");

  std::array<double, kNumComponents> centers = seeds;
  std::vector<std::uint8_t> assign(samples.size(), 255);
  for (int it = 0; it < settings.kmeans_max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::uint8_t best = 0;
      double best_d = std::abs(samples[i] - centers[0]);
      for (std::uint8_t k = 1; k < kNumComponents; ++k) {
        const double d = std::abs(samples[i] - centers[k]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::array<double, kNumComponents> sum{};
    std::array<std::size_t, kNumComponents> count{};
    for (std::size_t i = 0; i < samples.size(); ++i) {
      sum[assign[i]] += samples[i];
      ++count[assign[i]];
    }
    for (std::size_t k = 0; k < kNumComponents; ++k)
      centers[k] = count[k] > 0 ? sum[k] / static_cast<double>(count[k]) : seeds[k];
  }

  std::array<double, kNumComponents> sum{};
  std::array<double, kNumComponents> sq{};
  std::array<std::size_t, kNumComponents> count{};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sum[assign[i]] += samples[i];
    ++count[assign[i]];
  }
  MixtureInit out{};
  for (std::size_t k = 0; k < kNumComponents; ++k)
    out[k].mean = count[k] > 0 ? sum[k] / static_cast<double>(count[k]) : seeds[k];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i] - out[assign[i]].mean;
    sq[assign[i]] += d * d;
  }
  double wsum = 0.0;
  for (std::size_t k = 0; k < kNumComponents; ++k) {
    if (count[k] == 0) {
      out[k].variance = settings.variance_floor;
      out[k].weight = settings.weight_epsilon;
    } else {
      out[k].variance = std::max(sq[k] / static_cast<double>(count[k]), settings.variance_floor);
      out[k].weight = static_cast<double>(count[k]) / static_cast<double>(samples.size());
    }
    wsum += out[k].weight;
  }
  for (auto& c : out) c.weight /= wsum;
  return out;
}

/// EM for a 1D four-component mixture. Stops when the mean log-likelihood
/// changes by less than `tol` or after `max_iter` M-steps. Variances are
/// clamped at the floor; the init is sorted by mean first so any permutation
/// of the same init yields the identical model.
inline MixtureModel fit_em(const std::vector<double>& samples, MixtureInit init, const GmmSettings& settings = {}) {
  if (samples.size() < kNumComponents)
    throw Error(ErrorCode::EmptySampleSet, "EM needs at least 4 samples, got " + std::to_string(samples.size()));
  if (!(settings.tol > 0.0)) throw Error(ErrorCode::PreconditionViolation, "EM tol must be > 0");
  constexpr double kMinWeight = 1e-300;

  detail::sort_components(init);
  MixtureModel m;
  double wsum = 0.0;
  for (std::size_t k = 0; k < kNumComponents; ++k) {
    m.components[k] = init[k];
    m.components[k].variance = std::max(m.components[k].variance, settings.variance_floor);
    m.components[k].weight = std::max(m.components[k].weight, kMinWeight);
    wsum += m.components[k].weight;
  }
  for (auto& c : m.components) c.weight /= wsum;

  const auto n = static_cast<double>(samples.size());
  std::vector<std::array<double, kNumComponents>> resp(samples.size());

  auto e_step = [&]() {
    double ll = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto lj = detail::log_joint(m, samples[i]);
      const double lse = detail::log_sum_exp(lj);
      if (!std::isfinite(lse)) throw Error(ErrorCode::NonFiniteLikelihood, "sample " + std::to_string(i));
      for (std::size_t k = 0; k < kNumComponents; ++k) resp[i][k] = std::exp(lj[k] - lse);
      ll += lse;
    }
    const double mean_ll = ll / n;
    if (!std::isfinite(mean_ll)) throw Error(ErrorCode::NonFiniteLikelihood, "log-likelihood is not finite");
    m.log_likelihood_history.push_back(mean_ll);
    m.log_likelihood = mean_ll;
    return mean_ll;
  };

  double ll = e_step();
  for (int it = 0; it < settings.max_iter; ++it) {
    for (std::size_t k = 0; k < kNumComponents; ++k) {
      double nk = 0.0;
      double sx = 0.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        nk += resp[i][k];
        sx += resp[i][k] * samples[i];
      }
      auto& c = m.components[k];
      if (nk > 0.0) {
        c.mean = sx / nk;
        double sv = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          const double d = samples[i] - c.mean;
          sv += resp[i][k] * d * d;
        }
        c.variance = std::max(sv / nk, settings.variance_floor);
      }
      c.weight = std::max(nk / n, kMinWeight);
    }
    double ws = 0.0;
    for (const auto& c : m.components) ws += c.weight;
    for (auto& c : m.components) c.weight /= ws;
    m.iterations = it + 1;

    const double next = e_step();
    const double delta = next - ll;
    ll = next;
    if (std::abs(delta) < settings.tol) break;
  }
  detail::sort_components(m.components);
  return m;
}

/// Responsibilities, normalized by a max-shifted log-sum-exp.
inline std::array<double, kNumComponents> posteriors(const MixtureModel& m, double hu) {
  const auto lj = detail::log_joint(m, hu);
  const double lse = detail::log_sum_exp(lj);
  std::array<double, kNumComponents> out{};
  double s = 0.0;
  for (std::size_t k = 0; k < kNumComponents; ++k) {
    out[k] = std::exp(lj[k] - lse);
    s += out[k];
  }
  for (auto& p : out) p /= s;
  return out;
}

/// Most probable component; exact ties go to the lower-HU component.
inline PlaqueComponent classify(const MixtureModel& m, double hu) {
  const auto lj = detail::log_joint(m, hu);
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumComponents; ++k)
    if (lj[k] > lj[best]) best = k;
  return kAllComponents[best];
}

/// Dense label map aligned with the mask; unmasked voxels hold kUnlabeled.
struct LabelVolume {
  static constexpr std::uint8_t kUnlabeled = 255;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> labels;

  std::array<std::size_t, kNumComponents> histogram() const {
    std::array<std::size_t, kNumComponents> h{};
    for (auto l : labels)
      if (l != kUnlabeled) ++h[l];
    return h;
  }
};

inline LabelVolume classify_volume(const CaseBundle& b, const MixtureModel& m) {
  LabelVolume out;
  out.dims = b.volume.dims;
  out.labels.assign(b.volume.size(), LabelVolume::kUnlabeled);
  // HU values are integers: classify each distinct value once.
  std::array<std::uint8_t, 65536> cache{};
  cache.fill(LabelVolume::kUnlabeled);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    if (b.mask.flags[i] == 0) continue;
    const auto key = static_cast<std::size_t>(static_cast<std::uint16_t>(b.volume.values[i]));
    if (cache[key] == LabelVolume::kUnlabeled)
      cache[key] = static_cast<std::uint8_t>(classify(m, b.volume.values[i]));
    out.labels[i] = cache[key];
  }
  return out;
}

/// HU of every masked voxel, in flat voxel order.
inline std::vector<double> masked_samples(const CaseBundle& b) {
  std::vector<double> out;
  for (std::size_t i = 0; i < b.mask.flags.size(); ++i)
    if (b.mask.flags[i] != 0) out.push_back(b.volume.values[i]);
  return out;
}

inline MixtureModel fit_case(const std::vector<double>& samples, const GmmConfig& cfg) {
  const auto s = gmm_settings(cfg);
  return fit_em(samples, kmeans_init(samples, cfg.initial_means, s), s);
}

/// component,mean,variance,weight
inline std::string model_csv(const MixtureModel& m) {
  std::string out = "component,mean,variance,weight\n";
  for (std::size_t k = 0; k < kNumComponents; ++k) {
    const auto& c = m.components[k];
    out += std::string(name_of(kAllComponents[k])) + "," + text::format_double(c.mean) + "," +
           text::format_double(c.variance) + "," + text::format_double(c.weight) + "\n";
  }
  return out;
}

/// Reads model_csv output. Rows must list the four components in class order.
inline MixtureModel parse_model_csv(std::string_view content, std::string_view file) {
  const auto t = text::parse_csv(content, file);
  const auto cc = t.column("component", file);
  const auto cm = t.column("mean", file);
  const auto cv = t.column("variance", file);
  const auto cw = t.column("weight", file);
  if (t.rows.size() != kNumComponents)
    throw Error(ErrorCode::InvariantViolation, std::string(file) + ": expected 4 components");
  MixtureModel m;
  for (std::size_t k = 0; k < kNumComponents; ++k) {
    const auto& row = t.rows[k];
    if (row[cc] != name_of(kAllComponents[k]))
      throw Error(ErrorCode::InvariantViolation, std::string(file) + ": component " + std::to_string(k) + " must be " +
                                                     std::string(name_of(kAllComponents[k])));
    auto& c = m.components[k];
    c.mean = text::parse_double(row[cm], "mean");
    c.variance = text::parse_double(row[cv], "variance");
    c.weight = text::parse_double(row[cw], "weight");
    if (!(c.variance > 0.0) || !(c.weight > 0.0))
      throw Error(ErrorCode::InvariantViolation, std::string(file) + ": variances and weights must be > 0");
  }
  return m;
}

/// Sample histogram as a density next to the mixture density and its
/// weighted components, evaluated at the bin centers.
inline std::string histogram_csv(const std::vector<double>& samples, const MixtureModel& m, double bin) {
  if (samples.empty()) throw Error(ErrorCode::EmptySampleSet, "histogram: no samples");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = std::floor(*lo_it / bin) * bin;
  const auto nbins = static_cast<std::size_t>(std::floor((*hi_it - lo) / bin)) + 1;
  std::vector<std::size_t> counts(nbins, 0);
  for (double x : samples) ++counts[std::min(nbins - 1, static_cast<std::size_t>(std::floor((x - lo) / bin)))];
  std::string out = "bin_center,count,density,model_density";
  for (auto c : kAllComponents) out += "," + std::string(name_of(c));
  out += "\n";
  const double norm = static_cast<double>(samples.size()) * bin;
  for (std::size_t b = 0; b < nbins; ++b) {
    const double x = lo + (static_cast<double>(b) + 0.5) * bin;
    std::array<double, kNumComponents> parts{};
    double total = 0.0;
    for (std::size_t k = 0; k < kNumComponents; ++k) {
      const auto& c = m.components[k];
      parts[k] = c.weight * std::exp(detail::log_normal(x, c.mean, c.variance));
      total += parts[k];
    }
    out += text::format_double(x) + "," + std::to_string(counts[b]) + "," +
           text::format_double(static_cast<double>(counts[b]) / norm) + "," + text::format_double(total);
    for (double p : parts) out += "," + text::format_double(p);
    out += "\n";
  }
  return out;
}

}  // namespace plaquemech
