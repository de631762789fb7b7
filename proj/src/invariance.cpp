#include "srma/invariance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "srma/semantic_stats.hpp"

namespace srma::inv {

namespace {

constexpr std::array<std::string_view, 3> kLevelNames{"global", "local", "regional"};

double nearest(std::span<const double> a, const FeatureSampleSet& set) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < set.count(); ++j) {
    const double* b = set.values.data() + j * set.dim;
    double sq = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
      const double diff = a[d] - b[d];
      sq += diff * diff;
    }
    best = std::min(best, sq);
  }
  return std::sqrt(best);
}

double directed(const FeatureSampleSet& from, const FeatureSampleSet& to) {
  double sum = 0.0;
  for (std::size_t i = 0; i < from.count(); ++i) sum += nearest(from.row(i), to);
  return sum / static_cast<double>(from.count());
}

}  // namespace

std::string_view level_name(Level level) { return kLevelNames[static_cast<std::size_t>(level)]; }

std::optional<Level> parse_level(std::string_view name) {
  for (std::size_t i = 0; i < kLevelNames.size(); ++i) {
    if (kLevelNames[i] == name) return static_cast<Level>(i);
  }
  return std::nullopt;
}

void FeatureSampleSet::push(std::span<const double> v) {
  if (dim == 0) dim = v.size();
  if (v.size() != dim) throw ShapeMismatch("feature vector has the wrong dimension");
  values.insert(values.end(), v.begin(), v.end());
}

double chamfer_distance(const FeatureSampleSet& s, const FeatureSampleSet& t) {
  if (s.empty() || t.empty()) throw EmptySet();
  if (s.dim != t.dim) throw ShapeMismatch("chamfer distance between sets of different dimension");
  return 0.5 * directed(s, t) + 0.5 * directed(t, s);
}

double invariance_score(double d, double gamma) { return std::exp(-gamma * d); }

Standardizer Standardizer::fit(const FeatureSampleSet& set) {
  if (set.empty()) throw EmptySet();
  Standardizer st;
  st.mean.assign(set.dim, 0.0);
  st.std.assign(set.dim, 0.0);
  const double n = static_cast<double>(set.count());
  for (std::size_t i = 0; i < set.count(); ++i) {
    const auto r = set.row(i);
    for (std::size_t d = 0; d < set.dim; ++d) st.mean[d] += r[d];
  }
  for (double& m : st.mean) m /= n;
  for (std::size_t i = 0; i < set.count(); ++i) {
    const auto r = set.row(i);
    for (std::size_t d = 0; d < set.dim; ++d) st.std[d] += (r[d] - st.mean[d]) * (r[d] - st.mean[d]);
  }
  for (double& s : st.std) s = std::max(std::sqrt(s / n), kEpsStd);
  return st;
}

FeatureSampleSet Standardizer::apply(const FeatureSampleSet& set) const {
  if (set.dim != mean.size()) throw ShapeMismatch("standardizer dimension mismatch");
  FeatureSampleSet out = set;
  for (std::size_t i = 0; i < out.count(); ++i) {
    double* r = out.values.data() + i * out.dim;
    for (std::size_t d = 0; d < out.dim; ++d) r[d] = (r[d] - mean[d]) / std[d];
  }
  return out;
}

FeatureSampleSet DomainFeatures::pooled_local() const {
  FeatureSampleSet out;
  out.level = Level::local;
  for (const auto& [c, set] : local) {
    out.dim = set.dim;
    out.values.insert(out.values.end(), set.values.begin(), set.values.end());
  }
  return out;
}

DomainFeatures extract_features(const net::SegmentationNet& model, std::span<const data::SegSample> samples,
                                std::size_t layer) {
  if (layer > net::kDeepLayers) throw std::invalid_argument("layer must be in 0..4");
  DomainFeatures out;
  out.global.level = Level::global;
  for (const auto& s : samples) {
    const net::ForwardResult r = model.forward(s.image);
    const Tensor3& f = layer == 0 ? r.shallow.values : r.features[layer - 1].values;
    const LabelMap labels = stats::resize_labels(s.labels, f.height(), f.width());
    out.global.push(stats::gap(f));
    for (int c : stats::present_categories(labels)) {
      const stats::PixelSet px = stats::split_by_semantic(f, labels, c);
      auto& loc = out.local[c];
      loc.level = Level::local;
      loc.category = c;
      loc.dim = f.channels();
      loc.values.insert(loc.values.end(), px.values.begin(), px.values.end());
      auto& reg = out.regional[c];
      reg.level = Level::regional;
      reg.category = c;
      reg.push(stats::sap(f, labels, c));
    }
  }
  return out;
}

FeatureSampleSet subsample(const FeatureSampleSet& set, std::size_t n, std::uint64_t seed) {
  if (set.count() <= n) return set;
  std::vector<std::size_t> idx(set.count());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first n positions are a uniform draw without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  FeatureSampleSet out;
  out.level = set.level;
  out.category = set.category;
  out.dim = set.dim;
  out.values.reserve(n * set.dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = set.row(idx[i]);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  return out;
}

void AnalyzeOptions::validate() const {
  if (trials == 0) throw std::invalid_argument("trials must be >= 1");
  if (samples < kMinSamples) {
    throw std::invalid_argument("samples must be >= " + std::to_string(kMinSamples));
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be > 0");
  if (standardization_samples == 0) throw std::invalid_argument("standardization_samples must be >= 1");
}

std::vector<std::pair<FeatureSampleSet, FeatureSampleSet>> build_sample_sets(
    const DomainFeatures& source, const DomainFeatures& target, const Standardizer& standardizer,
    Level level, std::size_t samples, std::uint64_t seed, bool independent_sampling) {
  std::vector<std::pair<FeatureSampleSet, FeatureSampleSet>> out;
  auto draw = [&](const FeatureSampleSet& s, const FeatureSampleSet& t, std::uint64_t tag) {
    const std::uint64_t s_seed = mix_seed(seed, tag);
    const std::uint64_t t_seed = independent_sampling ? mix_seed(s_seed, 0x7a) : s_seed;
    out.emplace_back(standardizer.apply(subsample(s, samples, s_seed)),
                     standardizer.apply(subsample(t, samples, t_seed)));
  };
  if (level == Level::global) {
    if (!source.global.empty() && !target.global.empty()) draw(source.global, target.global, 0);
    return out;
  }
  const auto& src = level == Level::local ? source.local : source.regional;
  const auto& tgt = level == Level::local ? target.local : target.regional;
  for (const auto& [c, s] : src) {
    const auto it = tgt.find(c);
    if (it == tgt.end() || s.empty() || it->second.empty()) continue;
    draw(s, it->second, static_cast<std::uint64_t>(c) + 1);
  }
  return out;
}

InvarianceReport analyze(const DomainFeatures& source, const DomainFeatures& target,
                         const AnalyzeOptions& options) {
  options.validate();
  if (source.global.empty() || target.global.empty()) throw std::invalid_argument("empty dataset");

  InvarianceReport report;
  report.trials = options.trials;
  report.samples_per_trial = options.samples;
  report.gamma = options.gamma;
  report.seed = options.seed;
  report.independent_sampling = options.independent_sampling;
  report.standardization_seed = mix_seed(options.seed, 0x57d);
  const Standardizer standardizer = Standardizer::fit(
      subsample(source.pooled_local(), options.standardization_samples, report.standardization_seed));

  for (Level level : kLevels) {
    LevelResult& lr = report.levels[static_cast<std::size_t>(level)];
    double sum_d = 0.0, sum_s = 0.0;
    for (std::size_t t = 0; t < options.trials; ++t) {
      const std::uint64_t trial_seed = mix_seed(options.seed, (t + 1) * 16 + static_cast<std::uint64_t>(level));
      const auto pairs = build_sample_sets(source, target, standardizer, level, options.samples,
                                           trial_seed, options.independent_sampling);
      TrialResult tr;
      if (!pairs.empty()) {
        tr.distance = 0.0;
        tr.score = 0.0;
        for (const auto& [s, tt] : pairs) {
          CategoryResult cr;
          cr.category = s.category.value_or(-1);
          cr.distance = chamfer_distance(s, tt);
          cr.score = invariance_score(cr.distance, options.gamma);
          tr.distance += cr.distance;
          tr.score += cr.score;
          tr.categories.push_back(cr);
        }
        tr.distance /= static_cast<double>(pairs.size());
        tr.score /= static_cast<double>(pairs.size());
      }
      sum_d += tr.distance;
      sum_s += tr.score;
      lr.trials.push_back(std::move(tr));
    }
    lr.mean_distance = sum_d / static_cast<double>(options.trials);
    lr.mean_score = sum_s / static_cast<double>(options.trials);
  }
  return report;
}

InvarianceReport analyze(const net::SegmentationNet& model, std::span<const data::SegSample> source,
                         std::span<const data::SegSample> target, const AnalyzeOptions& options) {
  options.validate();
  if (source.empty() || target.empty()) throw std::invalid_argument("empty dataset");
  return analyze(extract_features(model, source), extract_features(model, target), options);
}

nlohmann::json to_json(const InvarianceReport& report) {
  nlohmann::json levels = nlohmann::json::object();
  for (Level level : kLevels) {
    const LevelResult& lr = report.level(level);
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& tr : lr.trials) {
      nlohmann::json cats = nlohmann::json::array();
      for (const auto& c : tr.categories) {
        cats.push_back({{"category", c.category}, {"distance", c.distance}, {"score", c.score}});
      }
      trials.push_back({{"distance", tr.distance}, {"score", tr.score}, {"categories", cats}});
    }
    levels[std::string(level_name(level))] = {
        {"mean_distance", lr.mean_distance}, {"mean_score", lr.mean_score}, {"trials", trials}};
  }
  return {{"trials", report.trials},
          {"samples_per_trial", report.samples_per_trial},
          {"gamma", report.gamma},
          {"seed", report.seed},
          {"standardization_seed", report.standardization_seed},
          {"sampling", report.independent_sampling ? "independent" : "paired"},
          {"levels", levels}};
}

std::string format_invariance_table(const std::vector<std::pair<std::string, InvarianceReport>>& rows) {
  std::ostringstream os;
  os << "target\tglobal\tlocal\tregional\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& [name, r] : rows) {
    os << name;
    for (Level level : kLevels) os << '\t' << r.level(level).mean_score;
    os << '\n';
  }
  return os.str();
}

}  // namespace srma::inv
