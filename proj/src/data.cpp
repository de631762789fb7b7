#include "srma/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace srma::data {

namespace fs = std::filesystem;
using nlohmann::json;

void DomainSpec::validate() const {
  if (image_size < 16) throw std::invalid_argument("domain image_size must be >= 16");
  if (num_categories < 1 || num_categories > 254) {
    throw std::invalid_argument("domain num_categories must be in [1, 254]");
  }
  if (styles.size() != static_cast<std::size_t>(num_categories)) {
    throw std::invalid_argument("domain needs one style per category");
  }
  for (const auto& s : styles) {
    for (double g : s.gain) {
      if (!(g > 0.0)) throw std::invalid_argument("domain colour gains must be positive");
    }
    if (s.noise < 0.0) throw std::invalid_argument("domain noise must be non-negative");
  }
  if (layout_cells < 1) throw std::invalid_argument("layout_cells must be >= 1");
  if (!(stripe_period > 0.0)) throw std::invalid_argument("stripe_period must be positive");
}

DomainSpec random_style_spec(std::string name, std::size_t image_size, int num_categories,
                             std::uint64_t layout_seed, std::uint64_t style_seed) {
  DomainSpec spec;
  spec.name = std::move(name);
  spec.image_size = image_size;
  spec.num_categories = num_categories;
  spec.layout_seed = layout_seed;
  Rng rng(mix_seed(style_seed, 0x5717e));
  std::uniform_real_distribution<double> gain(0.1, 0.75);
  std::uniform_real_distribution<double> bright(0.0, 0.25);
  std::uniform_real_distribution<double> noise(0.02, 0.06);
  for (int c = 0; c < num_categories; ++c) {
    CategoryStyle s;
    for (auto& g : s.gain) g = gain(rng);
    s.brightness = bright(rng);
    s.noise = noise(rng);
    spec.styles.push_back(s);
  }
  return spec;
}

json to_json(const DomainSpec& spec) {
  json styles = json::array();
  for (const auto& s : spec.styles) {
    styles.push_back({{"brightness", s.brightness}, {"gain", s.gain}, {"noise", s.noise}});
  }
  return {{"name", spec.name},
          {"image_size", spec.image_size},
          {"num_categories", spec.num_categories},
          {"layout_seed", spec.layout_seed},
          {"layout_cells", spec.layout_cells},
          {"stripe_period", spec.stripe_period},
          {"paired", spec.paired},
          {"styles", styles}};
}

DomainSpec domain_spec_from_json(const json& j) {
  DomainSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.image_size = j.at("image_size").get<std::size_t>();
  spec.num_categories = j.at("num_categories").get<int>();
  spec.layout_seed = j.at("layout_seed").get<std::uint64_t>();
  spec.layout_cells = j.value("layout_cells", spec.layout_cells);
  spec.stripe_period = j.value("stripe_period", spec.stripe_period);
  spec.paired = j.value("paired", true);
  for (const auto& s : j.at("styles")) {
    CategoryStyle cs;
    cs.brightness = s.at("brightness").get<double>();
    cs.gain = s.at("gain").get<std::array<double, 3>>();
    cs.noise = s.at("noise").get<double>();
    spec.styles.push_back(cs);
  }
  spec.validate();
  return spec;
}

double stripe_texture(int category, int num_categories, double period, double phase,
                      std::size_t y, std::size_t x) {
  const double theta = std::numbers::pi * category / std::max(num_categories, 1);
  const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
  return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / period + phase);
}

namespace {

struct Layout {
  LabelMap labels;
  std::vector<double> phases;  // one per category
};

Layout make_layout(const DomainSpec& spec, Rng& rng) {
  const std::size_t n = spec.image_size;
  std::uniform_real_distribution<double> coord(0.0, static_cast<double>(n));
  std::uniform_int_distribution<int> cat(0, spec.num_categories - 1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  std::vector<std::array<double, 2>> seeds(spec.layout_cells);
  std::vector<int> cell_cat(spec.layout_cells);
  for (std::size_t i = 0; i < spec.layout_cells; ++i) {
    seeds[i] = {coord(rng), coord(rng)};
    cell_cat[i] = cat(rng);
  }
  Layout layout{LabelMap(n, n, spec.num_categories), {}};
  for (int c = 0; c < spec.num_categories; ++c) layout.phases.push_back(phase(rng));
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        const double dy = static_cast<double>(y) + 0.5 - seeds[i][0];
        const double dx = static_cast<double>(x) + 0.5 - seeds[i][1];
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      layout.labels.at(y, x) = static_cast<std::uint8_t>(cell_cat[best]);
    }
  }
  return layout;
}

Layout paired_layout_full(const DomainSpec& spec, std::size_t index) {
  Rng rng(mix_seed(spec.layout_seed, index));
  return make_layout(spec, rng);
}

std::string sample_id(const std::string& prefix, std::size_t i) {
  std::ostringstream os;
  os << prefix << '_' << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

LabelMap paired_layout(const DomainSpec& spec, std::size_t index) {
  return paired_layout_full(spec, index).labels;
}

std::vector<SegSample> generate_domain(const DomainSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("generate_domain: n must be >= 1");
  std::vector<SegSample> out;
  out.reserve(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t size = spec.image_size;
  for (std::size_t i = 0; i < n; ++i) {
    Layout layout = spec.paired ? paired_layout_full(spec, i) : make_layout(spec, rng);
    SegSample s;
    s.id = sample_id(spec.name, i);
    s.image = Tensor3(3, size, size);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const int c = layout.labels.at(y, x);
        const CategoryStyle& st = spec.styles[static_cast<std::size_t>(c)];
        const double t = stripe_texture(c, spec.num_categories, spec.stripe_period,
                                        layout.phases[static_cast<std::size_t>(c)], y, x);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = st.brightness + st.gain[ch] * t + st.noise * gauss(rng);
          s.image.at(ch, y, x) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    s.labels = std::move(layout.labels);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void write_png(const fs::path& path, std::uint32_t w, std::uint32_t h, std::uint32_t format,
               const std::vector<std::uint8_t>& buffer) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = w;
  img.height = h;
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write " + path.string() + ": " + img.message);
  }
}

std::vector<std::uint8_t> read_png(const fs::path& path, std::uint32_t format, std::uint32_t& w,
                                   std::uint32_t& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot read " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode " + path.string() + ": " + img.message);
  }
  w = img.width;
  h = img.height;
  return buffer;
}

}  // namespace

void save_dataset(std::span<const SegSample> samples, const fs::path& root,
                  const std::optional<DomainSpec>& spec, const std::string& domain) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  json ids = json::array();
  int categories = spec ? spec->num_categories : 0;
  for (const auto& s : samples) {
    const auto w = static_cast<std::uint32_t>(s.image.width());
    const auto h = static_cast<std::uint32_t>(s.image.height());
    if (s.labels.height() != h || s.labels.width() != w) {
      throw ShapeMismatch("sample " + s.id + ": image and labels differ in size");
    }
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = std::clamp(s.image.at(c, y, x), 0.0, 1.0);
          rgb[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    write_png(root / "images" / (s.id + ".png"), w, h, PNG_FORMAT_RGB, rgb);
    write_png(root / "labels" / (s.id + ".png"), w, h, PNG_FORMAT_GRAY, s.labels.values());
    categories = std::max(categories, s.labels.num_categories());
    ids.push_back(s.id);
  }
  json manifest = {{"ids", ids},
                   {"num_categories", categories},
                   {"domain", !domain.empty() ? domain : (spec ? spec->name : std::string{})}};
  if (spec) manifest["spec"] = to_json(*spec);
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& root, int num_categories_hint) {
  if (!fs::is_directory(root / "images")) {
    throw std::runtime_error("dataset " + root.string() + " has no images/ directory");
  }
  Dataset ds;
  ds.num_categories = num_categories_hint;
  std::vector<std::string> ids;
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    const json manifest = json::parse(in);
    for (const auto& id : manifest.at("ids")) ids.push_back(id.get<std::string>());
    ds.num_categories = manifest.value("num_categories", num_categories_hint);
    ds.domain = manifest.value("domain", std::string{});
    if (manifest.contains("spec")) ds.spec = domain_spec_from_json(manifest["spec"]);
  } else {
    std::set<std::string> sorted;
    for (const auto& e : fs::directory_iterator(root / "images")) {
      if (e.path().extension() == ".png") sorted.insert(e.path().stem().string());
    }
    ids.assign(sorted.begin(), sorted.end());
    ds.domain = root.filename().string();
  }
  if (ds.num_categories < 1) throw std::runtime_error("dataset category count unknown");

  for (const auto& id : ids) {
    const fs::path img_path = root / "images" / (id + ".png");
    const fs::path lbl_path = root / "labels" / (id + ".png");
    if (!fs::exists(img_path)) throw MissingPair("label " + id + " has no image");
    if (!fs::exists(lbl_path)) throw MissingPair("image " + id + " has no label");
    std::uint32_t w = 0, h = 0, lw = 0, lh = 0;
    const auto rgb = read_png(img_path, PNG_FORMAT_RGB, w, h);
    const auto gray = read_png(lbl_path, PNG_FORMAT_GRAY, lw, lh);
    if (w != lw || h != lh) throw ShapeMismatch("sample " + id + ": image/label size differ");
    SegSample s;
    s.id = id;
    s.image = Tensor3(3, h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          s.image.at(c, y, x) = rgb[(y * w + x) * 3 + c] / 255.0;
        }
      }
    }
    s.labels = LabelMap(h, w, ds.num_categories);
    s.labels.values() = gray;
    try {
      s.labels.validate();
    } catch (const std::out_of_range& e) {
      throw LabelOutOfRange("sample " + id + ": " + e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

ConfusionMatrix::ConfusionMatrix(int num_categories)
    : n_(static_cast<std::size_t>(num_categories)), cells_(n_ * n_, 0) {
  if (num_categories < 1) throw std::invalid_argument("confusion matrix needs >= 1 category");
}

void ConfusionMatrix::add(const LabelMap& prediction, const LabelMap& truth) {
  if (prediction.height() != truth.height() || prediction.width() != truth.width()) {
    throw ShapeMismatch("prediction and truth differ in size");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = truth[i];
    const auto p = prediction[i];
    if (t == kIgnoreLabel || t >= n_) continue;
    if (p == kIgnoreLabel || p >= n_) continue;
    ++cells_[t * n_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeMismatch("confusion matrices differ in size");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += other.cells_[i];
}

std::vector<std::optional<double>> ConfusionMatrix::iou() const {
  std::vector<std::optional<double>> out(n_);
  for (std::size_t c = 0; c < n_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n_; ++k) {
      row += cells_[c * n_ + k];
      col += cells_[k * n_ + c];
    }
    const std::uint64_t tp = cells_[c * n_ + c];
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    out[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

IouReport summarize(const ConfusionMatrix& cm) {
  IouReport r;
  r.per_category = cm.iou();
  double sum = 0.0;
  for (const auto& v : r.per_category) {
    if (!v) continue;
    sum += *v;
    ++r.defined;
  }
  r.mean = r.defined ? sum / static_cast<double>(r.defined) : 0.0;
  return r;
}

IouReport miou(std::span<const LabelMap> predictions, std::span<const LabelMap> truths,
               int num_categories) {
  if (predictions.size() != truths.size()) throw ShapeMismatch("prediction/truth count differs");
  ConfusionMatrix cm(num_categories);
  for (std::size_t i = 0; i < truths.size(); ++i) cm.add(predictions[i], truths[i]);
  return summarize(cm);
}

std::string format_iou_table(const IouReport& report) {
  std::ostringstream os;
  os << "category\tIoU(%)\n";
  for (std::size_t c = 0; c < report.per_category.size(); ++c) {
    os << c << '\t';
    if (report.per_category[c]) {
      os << std::fixed << std::setprecision(2) << 100.0 * *report.per_category[c];
    } else {
      os << '-';
    }
    os << '\n';
  }
  os << "mean\t" << std::fixed << std::setprecision(2) << 100.0 * report.mean << '\n';
  return os.str();
}

}  // namespace srma::data
