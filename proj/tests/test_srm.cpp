#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "srma/semantic_stats.hpp"
#include "srma/srm.hpp"

using namespace srma;
using doctest::Approx;

namespace {

stats::RegionStats make_stats(std::vector<double> mean, std::vector<double> std) {
  stats::RegionStats s;
  s.mean = std::move(mean);
  s.std = std::move(std);
  s.pixel_count = 1;
  return s;
}

}  // namespace

TEST_CASE("default concentration") { CHECK(srm::kDefaultAlpha == std::pow(2.0, -6)); }

TEST_CASE("mix weights live on the simplex") {
  Rng rng(11);
  const std::vector<int> cats{0, 2, 3, 7};
  for (double alpha : {srm::kDefaultAlpha, 0.5, 1.0, 10.0}) {
    for (int t = 0; t < 200; ++t) {
      const auto w = srm::sample_mix_weights(rng, cats, alpha);
      REQUIRE(w.weights.size() == cats.size());
      CHECK(w.categories == cats);
      for (const auto& v : w.weights) {
        REQUIRE(v.size() == cats.size());
        double sum = 0.0;
        for (double x : v) {
          CHECK(x >= 0.0);
          sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
    }
  }
  const std::vector<int> single{5};
  const auto one = srm::sample_mix_weights(rng, single, srm::kDefaultAlpha);
  REQUIRE(one.weights.size() == 1);
  CHECK(one.weights[0] == std::vector<double>{1.0});
}

TEST_CASE("mix weights are deterministic per seed") {
  const std::vector<int> cats{0, 1, 2};
  Rng a(42), b(42);
  CHECK(srm::sample_mix_weights(a, cats, 0.1).weights == srm::sample_mix_weights(b, cats, 0.1).weights);
}

TEST_CASE("dirichlet mean matches 1/k") {
  // E[w_i] = 1/k for a symmetric Dirichlet whatever alpha is.
  Rng rng(99);
  const std::size_t k = 3, n = 20000;
  std::vector<double> mean(k, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto w = srm::sample_dirichlet(rng, k, 0.5);
    for (std::size_t i = 0; i < k; ++i) mean[i] += w[i] / n;
  }
  // Var[w_i] = (1/k)(1-1/k)/(k alpha + 1) = 0.0889; 5 sigma of the mean is 0.011.
  for (double m : mean) CHECK(std::abs(m - 1.0 / 3.0) < 0.011);
}

TEST_CASE("small concentration gives near one-hot draws") {
  Rng rng(5);
  int peaked = 0;
  for (int t = 0; t < 500; ++t) {
    const auto w = srm::sample_dirichlet(rng, 4, srm::kDefaultAlpha);
    if (*std::max_element(w.begin(), w.end()) > 0.9) ++peaked;
  }
  CHECK(peaked > 400);
}

TEST_CASE("synthesize_distribution") {
  const std::vector<stats::RegionStats> two{make_stats({0.0}, {1.0}), make_stats({4.0}, {3.0})};
  const std::vector<double> half{0.5, 0.5};
  const auto mixed = srm::synthesize_distribution(two, half);
  CHECK(mixed.mean[0] == Approx(2.0));
  CHECK(mixed.std[0] == Approx(2.0));

  const std::vector<double> hot{0.0, 1.0};
  const auto picked = srm::synthesize_distribution(two, hot);
  CHECK(picked.mean == two[1].mean);
  CHECK(picked.std == two[1].std);

  const std::vector<stats::RegionStats> same(3, make_stats({1.5, -2.0}, {0.5, 2.0}));
  const std::vector<double> uniform(3, 1.0 / 3.0);
  const auto u = srm::synthesize_distribution(same, uniform);
  CHECK(u.mean[0] == Approx(1.5));
  CHECK(u.std[1] == Approx(2.0));

  const std::vector<double> wrong{1.0};
  CHECK_THROWS(srm::synthesize_distribution(two, wrong));
}

TEST_CASE("adain_transfer") {
  stats::PixelSet px;
  px.dim = 1;
  px.values = {1.0, 3.0};
  const auto src = make_stats({2.0}, {1.0});
  const auto out = srm::adain_transfer(px, src, make_stats({0.0}, {2.0}));
  CHECK(out.values[0] == Approx(-2.0));
  CHECK(out.values[1] == Approx(2.0));

  const auto same = srm::adain_transfer(px, src, src);
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(same.values[i] - px.values[i]) < 1e-6);

  const auto collapsed = srm::adain_transfer(px, src, make_stats({7.0}, {kEpsStd}));
  for (double v : collapsed.values) CHECK(std::abs(v - 7.0) < 1e-4);
}

TEST_CASE("rearrange writes the synthesized moments into every region") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureMap f{testing::random_tensor(4, 6, 5, rng, 0.5, 1.5), 0};
    const LabelMap gt = testing::random_labels(6, 5, 4, rng, 0.1);
    std::vector<srm::RegionTrace> trace;
    Rng draw(trial);
    const FeatureMap out = srm::rearrange(f, gt, draw, srm::kDefaultAlpha, &trace);
    CHECK(out.values.same_shape(f.values));
    CHECK(out.layer == 0);
    CHECK(trace.size() == stats::present_categories(gt).size());
    for (const auto& t : trace) {
      const int c = t.original.category;
      const auto achieved = stats::region_moments(out.values, gt, c);
      for (std::size_t d = 0; d < 4; ++d) {
        CHECK(std::abs(achieved.mean[d] - t.synthesized.mean[d]) < 1e-4);
        CHECK(std::abs(achieved.std[d] - t.synthesized.std[d]) < 1e-4);
      }
      // Content: the standardised pattern of each region is untouched.
      const auto before = stats::split_by_semantic(f.values, gt, c);
      const auto after = stats::split_by_semantic(out.values, gt, c);
      for (std::size_t i = 0; i < before.count(); ++i) {
        for (std::size_t d = 0; d < 4; ++d) {
          const double zb = (before.row(i)[d] - t.original.mean[d]) / t.original.std[d];
          const double za = (after.row(i)[d] - achieved.mean[d]) / achieved.std[d];
          CHECK(std::abs(za - zb) < 1e-4);
        }
      }
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] != kIgnoreLabel) continue;
      for (std::size_t d = 0; d < 4; ++d) CHECK(out.values.plane(d)[i] == f.values.plane(d)[i]);
    }
  }
}

TEST_CASE("rearrange with one category keeps its own moments") {
  Rng rng(3);
  const FeatureMap f{testing::random_tensor(2, 4, 4, rng, 1.0, 2.0), 0};
  const LabelMap gt(4, 4, 3, 2);
  Rng draw(1);
  std::vector<srm::RegionTrace> trace;
  const FeatureMap out = srm::rearrange(f, gt, draw, srm::kDefaultAlpha, &trace);
  REQUIRE(trace.size() == 1);
  CHECK(trace[0].weights == std::vector<double>{1.0});
  for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(std::abs(out.values.values()[i] - f.values.values()[i]) < 1e-9);
}

TEST_CASE("rearrange is deterministic and validates its inputs") {
  Rng rng(8);
  const FeatureMap f{testing::random_tensor(3, 5, 5, rng), 0};
  const LabelMap gt = testing::random_labels(5, 5, 3, rng);
  Rng a(77), b(77);
  CHECK(srm::rearrange(f, gt, a, 0.1).values == srm::rearrange(f, gt, b, 0.1).values);

  const FeatureMap deep{f.values, 2};
  CHECK_THROWS(srm::rearrange(deep, gt, a, 0.1));
  CHECK_THROWS_AS(srm::rearrange(f, testing::random_labels(4, 5, 3, rng), a, 0.1), ShapeMismatch);
}
