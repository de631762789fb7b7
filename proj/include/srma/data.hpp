#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "srma/random.hpp"
#include "srma/tensor.hpp"

namespace srma::data {

class MissingPair : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LabelOutOfRange : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Appearance of one category in one domain.
struct CategoryStyle {
  double brightness = 0.0;
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  double noise = 0.02;
};

/// Synthetic domain: Voronoi layouts of oriented stripe textures (one orientation per
/// category, shared by all domains) rendered with per-category colour styles.
struct DomainSpec {
  std::string name = "source";
  std::size_t image_size = 32;
  int num_categories = 4;
  std::uint64_t layout_seed = 1;
  std::size_t layout_cells = 6;
  double stripe_period = 4.0;
  bool paired = true;  // layouts derived from layout_seed only, shared by domains with that seed
  std::vector<CategoryStyle> styles;

  void validate() const;
};

/// Domain with per-category styles drawn from `style_seed`.
DomainSpec random_style_spec(std::string name, std::size_t image_size, int num_categories,
                             std::uint64_t layout_seed, std::uint64_t style_seed);

nlohmann::json to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);

struct SegSample {
  std::string id;
  Tensor3 image;  // 3 x H x W in [0, 1]
  LabelMap labels;
};

/// Category texture intensity in [0, 1] at pixel (y, x).
double stripe_texture(int category, int num_categories, double period, double phase,
                      std::size_t y, std::size_t x);

/// The label layout for image `index` of a paired domain.
LabelMap paired_layout(const DomainSpec& spec, std::size_t index);

std::vector<SegSample> generate_domain(const DomainSpec& spec, std::size_t n, Rng& rng);

struct Dataset {
  std::string domain;
  int num_categories = 0;
  std::optional<DomainSpec> spec;
  std::vector<SegSample> samples;
};

/// Writes images/<id>.png (RGB8), labels/<id>.png (gray8, 255 = ignore) and manifest.json.
void save_dataset(std::span<const SegSample> samples, const std::filesystem::path& root,
                  const std::optional<DomainSpec>& spec = std::nullopt,
                  const std::string& domain = "");

/// Reads a dataset written by save_dataset. Without a manifest, ids come from images/ and
/// the category count from `num_categories_hint`.
Dataset load_dataset(const std::filesystem::path& root, int num_categories_hint = 0);

/// Accumulated confusion matrix; rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_categories);

  void add(const LabelMap& prediction, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(int truth, int predicted) const {
    return cells_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)];
  }
  int num_categories() const noexcept { return static_cast<int>(n_); }

  /// IoU per category; nullopt when the category is absent from both truth and prediction.
  std::vector<std::optional<double>> iou() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> cells_;
};

struct IouReport {
  std::vector<std::optional<double>> per_category;
  double mean = 0.0;
  std::size_t defined = 0;
};

IouReport miou(std::span<const LabelMap> predictions, std::span<const LabelMap> truths,
               int num_categories);
IouReport summarize(const ConfusionMatrix& cm);

/// Fixed-width table with one row per category; undefined IoUs print as "-".
std::string format_iou_table(const IouReport& report);

}  // namespace srma::data
