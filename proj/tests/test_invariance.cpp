#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "srma/invariance.hpp"

using namespace srma;
using namespace srma::inv;
using doctest::Approx;

namespace {

FeatureSampleSet points(std::size_t dim, std::initializer_list<double> v) {
  FeatureSampleSet s;
  s.dim = dim;
  s.values = v;
  return s;
}

FeatureSampleSet random_set(std::size_t n, std::size_t dim, Rng& rng) {
  FeatureSampleSet s;
  s.dim = dim;
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < n * dim; ++i) s.values.push_back(g(rng));
  return s;
}

double naive_chamfer(const FeatureSampleSet& a, const FeatureSampleSet& b) {
  auto one_way = [](const FeatureSampleSet& x, const FeatureSampleSet& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.count(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < y.count(); ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < x.dim; ++k) d += std::pow(x.row(i)[k] - y.row(j)[k], 2);
        best = std::min(best, std::sqrt(d));
      }
      total += best;
    }
    return total / static_cast<double>(x.count());
  };
  return 0.5 * one_way(a, b) + 0.5 * one_way(b, a);
}

std::vector<data::SegSample> domain(std::uint64_t style_seed, std::size_t n) {
  const auto spec = data::random_style_spec("d", 16, 2, 5, style_seed);
  Rng rng(1);
  return data::generate_domain(spec, n, rng);
}

net::NetworkConfig small_net() {
  net::NetworkConfig c;
  c.channels = {4, 6, 6, 8, 8};
  c.num_classes = 2;
  c.decoder_channels = 0;
  return c;
}

}  // namespace

TEST_CASE("chamfer examples") {
  const auto a = points(2, {0, 0, 1, 1});
  CHECK(chamfer_distance(a, a) == 0.0);
  CHECK(chamfer_distance(points(1, {0}), points(1, {3})) == Approx(3.0));
  // min distances: from {0,2}: 1, 1; from {1}: 1.
  CHECK(chamfer_distance(points(1, {0, 2}), points(1, {1})) == Approx(1.0));
  CHECK_THROWS_AS(chamfer_distance(FeatureSampleSet{}, a), EmptySet);
  CHECK_THROWS_AS(chamfer_distance(a, points(2, {})), EmptySet);
}

TEST_CASE("chamfer agrees with a naive oracle and is symmetric") {
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> n(1, 50), d(1, 8);
  for (int t = 0; t < 50; ++t) {
    const std::size_t dim = d(rng);
    const auto a = random_set(n(rng), dim, rng);
    const auto b = random_set(n(rng), dim, rng);
    const double c = chamfer_distance(a, b);
    CHECK(std::abs(c - naive_chamfer(a, b)) < 1e-9);
    CHECK(std::abs(c - chamfer_distance(b, a)) < 1e-12);
    CHECK(c >= 0.0);
  }
}

TEST_CASE("score mapping") {
  CHECK(invariance_score(0.0) == 1.0);
  CHECK(invariance_score(3.0, 0.01) == Approx(std::exp(-0.03)).epsilon(1e-12));
  CHECK(invariance_score(1.0) > invariance_score(2.0));
  CHECK(invariance_score(1e4) > 0.0);
}

TEST_CASE("subsampling") {
  Rng rng(2);
  const auto set = random_set(30, 3, rng);
  const auto a = subsample(set, 10, 5);
  CHECK(a.count() == 10);
  CHECK(a.values == subsample(set, 10, 5).values);
  CHECK(subsample(set, 100, 5).count() == 30);
}

TEST_CASE("standardizer") {
  Rng rng(3);
  FeatureSampleSet s;
  s.dim = 2;
  std::normal_distribution<double> g(5.0, 3.0);
  for (int i = 0; i < 500; ++i) {
    s.values.push_back(g(rng));
    s.values.push_back(-2.0);  // constant channel
  }
  const auto st = Standardizer::fit(s);
  const auto z = st.apply(s);
  double m = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < z.count(); ++i) {
    m += z.row(i)[0];
    sq += z.row(i)[0] * z.row(i)[0];
    CHECK(std::isfinite(z.row(i)[1]));
  }
  m /= 500.0;
  CHECK(std::abs(m) < 1e-9);
  CHECK(std::sqrt(sq / 500.0 - m * m) == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("feature extraction layout") {
  const net::SegmentationNet model(small_net());
  auto samples = domain(1, 2);
  // Top half category 0, bottom half category 1.
  for (auto& s : samples) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) s.labels[i] = i < s.labels.size() / 2 ? 0 : 1;
  }
  const auto f = extract_features(model, samples);
  CHECK(f.global.count() == 2);
  CHECK(f.global.dim == 8);
  std::size_t regional = 0;
  for (const auto& [c, set] : f.regional) regional += set.count();
  CHECK(regional == 4);
  CHECK(f.pooled_local().count() > 0);
  CHECK(extract_features(model, samples, 0).global.dim == 4);
  CHECK_THROWS(extract_features(model, samples, 5));
}

TEST_CASE("identical domains are fully invariant") {
  const net::SegmentationNet model(small_net());
  const auto s = domain(1, 4);
  AnalyzeOptions opt;
  opt.trials = 3;
  opt.samples = 50;
  const auto r = analyze(model, s, s, opt);
  for (Level l : kLevels) {
    CHECK(r.level(l).mean_score >= 0.99);
    CHECK(r.level(l).trials.size() == 3);
  }
  const auto json = to_json(r);
  CHECK(json.at("sampling") == "paired");

  const auto other = domain(2, 4);
  const auto d = analyze(model, s, other, opt);
  for (Level l : kLevels) {
    CHECK(d.level(l).mean_score > 0.0);
    CHECK(d.level(l).mean_score <= 1.0);
  }
  const std::string table = format_invariance_table({{"other", d}});
  CHECK(table.rfind("target\tglobal\tlocal\tregional", 0) == 0);

  opt.independent_sampling = true;
  CHECK(to_json(analyze(model, s, other, opt)).at("sampling") == "independent");
}

TEST_CASE("analyzer options are validated") {
  AnalyzeOptions opt;
  opt.samples = kMinSamples - 1;
  CHECK_THROWS(opt.validate());
  opt = {};
  opt.trials = 0;
  CHECK_THROWS(opt.validate());
  opt = {};
  opt.gamma = 0.0;
  CHECK_THROWS(opt.validate());
  CHECK(parse_level("regional") == Level::regional);
  CHECK_FALSE(parse_level("pixel").has_value());
}
