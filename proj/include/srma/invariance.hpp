#pragma once

// Domain-invariance analysis of layer-4 features: Chamfer distance between sampled
// source and target feature sets, mapped to a similarity exp(-gamma * d).

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "srma/data.hpp"
#include "srma/random.hpp"
#include "srma/toynet.hpp"

namespace srma::inv {

class EmptySet : public std::invalid_argument {
 public:
  EmptySet() : std::invalid_argument("chamfer distance of an empty set") {}
};

inline constexpr double kDefaultGamma = 0.01;
inline constexpr std::size_t kDefaultTrials = 10;
inline constexpr std::size_t kDefaultSamples = 300;
inline constexpr std::size_t kMinSamples = 10;

enum class Level { global, local, regional };
inline constexpr std::array<Level, 3> kLevels{Level::global, Level::local, Level::regional};
std::string_view level_name(Level level);
std::optional<Level> parse_level(std::string_view name);

struct FeatureSampleSet {
  Level level = Level::global;
  std::optional<int> category;
  std::size_t dim = 0;
  std::vector<double> values;  // count x dim, row-major

  std::size_t count() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
  bool empty() const noexcept { return values.empty(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  void push(std::span<const double> v);
};

/// 1/2 mean_s min_t |s - t| + 1/2 mean_t min_s |t - s|. Throws EmptySet.
double chamfer_distance(const FeatureSampleSet& s, const FeatureSampleSet& t);
double invariance_score(double d, double gamma = kDefaultGamma);

/// Per-channel standardisation statistics.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  static Standardizer fit(const FeatureSampleSet& set);
  FeatureSampleSet apply(const FeatureSampleSet& set) const;
};

/// Raw layer-l features of one dataset: one GAP vector per sample, pixel vectors per
/// category and one SAP vector per (sample, present category).
struct DomainFeatures {
  FeatureSampleSet global;
  std::map<int, FeatureSampleSet> local;
  std::map<int, FeatureSampleSet> regional;

  /// Every local vector regardless of category.
  FeatureSampleSet pooled_local() const;
};

/// `layer` in 0..4; 4 is the deepest.
DomainFeatures extract_features(const net::SegmentationNet& model, std::span<const data::SegSample> samples,
                                std::size_t layer = 4);

/// Up to `n` rows chosen without replacement by a seeded permutation. Two sets of the same
/// size subsampled with the same seed keep the same row indices.
FeatureSampleSet subsample(const FeatureSampleSet& set, std::size_t n, std::uint64_t seed);

struct AnalyzeOptions {
  std::size_t trials = kDefaultTrials;
  std::size_t samples = kDefaultSamples;
  double gamma = kDefaultGamma;
  std::uint64_t seed = 1;
  /// Default: source and target sets of a trial share one subsampling seed (common
  /// random numbers), so identical domains give distance 0. When set, every set draws
  /// its own seed.
  bool independent_sampling = false;
  /// Size of the designated source local sample used for the standardisation statistics.
  std::size_t standardization_samples = 2000;

  void validate() const;
};

/// Standardised, subsampled (S, T) set pairs of one level for one trial: a single pair for
/// the global level, one per category present in both domains otherwise.
std::vector<std::pair<FeatureSampleSet, FeatureSampleSet>> build_sample_sets(
    const DomainFeatures& source, const DomainFeatures& target, const Standardizer& standardizer,
    Level level, std::size_t samples, std::uint64_t seed, bool independent_sampling = false);

struct CategoryResult {
  int category = -1;
  double distance = 0.0;
  double score = 1.0;
};

struct TrialResult {
  double distance = 0.0;  // mean over categories for local / regional
  double score = 1.0;     // mean of per-category scores for local / regional
  std::vector<CategoryResult> categories;
};

struct LevelResult {
  double mean_distance = 0.0;
  double mean_score = 1.0;
  std::vector<TrialResult> trials;
};

struct InvarianceReport {
  std::size_t trials = 0;
  std::size_t samples_per_trial = 0;
  double gamma = kDefaultGamma;
  std::uint64_t seed = 0;
  std::uint64_t standardization_seed = 0;
  bool independent_sampling = false;
  std::array<LevelResult, 3> levels;

  const LevelResult& level(Level l) const { return levels[static_cast<std::size_t>(l)]; }
};

InvarianceReport analyze(const DomainFeatures& source, const DomainFeatures& target,
                         const AnalyzeOptions& options = {});
InvarianceReport analyze(const net::SegmentationNet& model, std::span<const data::SegSample> source,
                         std::span<const data::SegSample> target, const AnalyzeOptions& options = {});

nlohmann::json to_json(const InvarianceReport& report);

/// One row per target and one column per level (mean scores), tab separated.
std::string format_invariance_table(const std::vector<std::pair<std::string, InvarianceReport>>& rows);

}  // namespace srma::inv
