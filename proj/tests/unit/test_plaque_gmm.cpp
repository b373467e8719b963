#include <random>

#include <gtest/gtest.h>

#include "plaquemech/plaque_gmm.hpp"
#include "plaquemech/synthetic.hpp"

using namespace plaquemech;

namespace {

constexpr std::array<double, 4> kSeeds{20.0, 90.0, 180.0, 500.0};

std::vector<double> two_clusters(std::size_t n_each, double s0, double s1, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> a(0.0, s0), b(500.0, s1);
  std::vector<double> out;
  for (std::size_t i = 0; i < n_each; ++i) {
    out.push_back(a(rng));
    out.push_back(b(rng));
  }
  return out;
}

/// Mixture density evaluated directly, without logs.
double density(const GaussianComponent& c, double x) {
  return c.weight * std::exp(-0.5 * (x - c.mean) * (x - c.mean) / c.variance) / std::sqrt(2.0 * M_PI * c.variance);
}

}  // namespace

TEST(PlaqueGmm, KmeansConstantSamplesUseFallback) {
  const std::vector<double> s(100, 100.0);
  const auto init = kmeans_init(s, kSeeds);
  EXPECT_EQ(init[1].mean, 100.0);
  EXPECT_NEAR(init[1].weight, 1.0, 1e-5);
  for (std::size_t k : {0u, 2u, 3u}) {
    EXPECT_EQ(init[k].mean, kSeeds[k]);
    EXPECT_EQ(init[k].variance, 1.0);
  }
}

TEST(PlaqueGmm, KmeansTwoTightClusters) {
  const auto s = two_clusters(500, 1.0, 1.0, 1);
  const auto init = kmeans_init(s, kSeeds);
  EXPECT_NEAR(init[0].mean, 0.0, 0.2);
  EXPECT_NEAR(init[3].mean, 500.0, 0.2);
  EXPECT_NEAR(init[0].weight, 0.5, 1e-5);
  EXPECT_NEAR(init[3].weight, 0.5, 1e-5);
}

TEST(PlaqueGmm, KmeansRejectsBadInput) {
  EXPECT_THROW((void)kmeans_init({1.0}, {20.0, 10.0, 180.0, 500.0}), Error);
  try {
    (void)kmeans_init({}, kSeeds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySampleSet);
  }
}

TEST(PlaqueGmm, EmRecoversTwoComponents) {
  const auto s = two_clusters(5000, 10.0, 30.0, 2);
  const auto m = fit_em(s, kmeans_init(s, kSeeds));
  EXPECT_NEAR(m.components[0].mean, 0.0, 2.0);
  EXPECT_NEAR(m.components[3].mean, 500.0, 2.0);
  EXPECT_NEAR(m.components[0].weight, 0.5, 0.02);
  EXPECT_NEAR(m.components[3].weight, 0.5, 0.02);
  for (std::size_t i = 1; i < m.log_likelihood_history.size(); ++i)
    EXPECT_GE(m.log_likelihood_history[i], m.log_likelihood_history[i - 1] - 1e-10);
}

TEST(PlaqueGmm, EmConstantSamplesHitVarianceFloor) {
  const std::vector<double> s(50, 42.0);
  const auto m = fit_em(s, kmeans_init(s, kSeeds));
  for (const auto& c : m.components) EXPECT_EQ(c.variance, 1.0);
  EXPECT_TRUE(std::isfinite(m.log_likelihood));
}

TEST(PlaqueGmm, EmFixedPointConvergesImmediately) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(100.0, 15.0);
  std::vector<double> s(2000);
  for (auto& x : s) x = g(rng);
  double mean = 0.0, var = 0.0;
  for (double x : s) mean += x / s.size();
  for (double x : s) var += (x - mean) * (x - mean) / s.size();
  // one real component, three negligible far-away ones
  MixtureInit init{{{mean, var, 1.0 - 3e-12}, {1e4, 1.0, 1e-12}, {2e4, 1.0, 1e-12}, {3e4, 1.0, 1e-12}}};
  const auto m = fit_em(s, init);
  EXPECT_LE(m.iterations, 2);
  EXPECT_NEAR(m.components[0].mean, mean, 1e-6);
  EXPECT_NEAR(m.components[0].variance, var, 1e-6 * var);
}

TEST(PlaqueGmm, EmIsPermutationInvariantInInit) {
  const auto s = synth::mixture_samples(3000, kSeeds, {10, 20, 25, 40}, {0.25, 0.25, 0.25, 0.25}, 5).values;
  auto init = kmeans_init(s, kSeeds);
  const auto a = fit_em(s, init);
  std::swap(init[0], init[3]);
  std::swap(init[1], init[2]);
  EXPECT_EQ(fit_em(s, init), a);
}

TEST(PlaqueGmm, EmTooFewSamples) {
  EXPECT_THROW((void)fit_em({1.0, 2.0}, MixtureInit{}), Error);
}

TEST(PlaqueGmm, PosteriorsMatchDirectDensity) {
  MixtureModel m;
  m.components = {{{20, 100, 0.3}, {90, 400, 0.3}, {180, 625, 0.2}, {500, 1600, 0.2}}};
  for (double x : {-50.0, 20.0, 55.0, 140.0, 300.0, 490.0, 800.0}) {
    const auto p = posteriors(m, x);
    double total = 0.0;
    for (const auto& c : m.components) total += density(c, x);
    double sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(p[k], density(m.components[k], x) / total, 1e-12);
      sum += p[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
  EXPECT_GT(posteriors(m, 500.0)[3], 0.999);
  EXPECT_EQ(classify(m, 490.0), PlaqueComponent::Calcification);
}

TEST(PlaqueGmm, SymmetricModelAndTieRule) {
  MixtureModel m;
  m.components = {{{0, 100, 0.5}, {1e5, 1, 1e-9}, {2e5, 1, 1e-9}, {200, 100, 0.5}}};
  const auto p = posteriors(m, 100.0);
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[3], 0.5, 1e-12);
  EXPECT_EQ(classify(m, 100.0), PlaqueComponent::LipidRich);
}

TEST(PlaqueGmm, ModelCsvRoundTrip) {
  const auto s = synth::mixture_samples(2000, kSeeds, {10, 20, 25, 40}, {0.25, 0.25, 0.25, 0.25}, 9).values;
  const auto m = fit_em(s, kmeans_init(s, kSeeds));
  const auto back = parse_model_csv(model_csv(m), "model.csv");
  EXPECT_EQ(back.components, m.components);
  EXPECT_THROW((void)parse_model_csv("component,mean,variance,weight\nlipid_rich,1,1,1\n", "m"), Error);
  EXPECT_THROW((void)parse_model_csv("component,mean,variance,weight\nfibrotic,1,1,1\nlipid_rich,1,1,1\n"
                                     "normal_intima,1,1,1\ncalcification,1,1,1\n",
                                     "m"),
               Error);
}

TEST(PlaqueGmm, ClassifyVolumeSingleVoxel) {
  CaseBundle b;
  b.volume.dims = {2, 2, 1};
  b.volume.spacing = {1, 1, 1};
  b.volume.values = {10, 480, 95, 200};
  b.mask.dims = b.volume.dims;
  b.mask.flags = {0, 1, 0, 0};
  MixtureModel m;
  m.components = {{{20, 100, 0.25}, {90, 400, 0.25}, {180, 625, 0.25}, {500, 1600, 0.25}}};
  const auto lv = classify_volume(b, m);
  EXPECT_EQ(lv.labels[0], LabelVolume::kUnlabeled);
  EXPECT_EQ(lv.labels[1], static_cast<std::uint8_t>(classify(m, 480.0)));
  EXPECT_EQ(lv.histogram()[3], 1u);
}
