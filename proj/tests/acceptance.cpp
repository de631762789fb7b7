// Acceptance suite: one PASS/FAIL line per criterion.
//
// Criteria 1-7 and 9 are exact properties and decide the exit status. Criteria 8 and 10
// are directional training trends; they are always reported but only affect the exit
// status with --strict.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "srma/cli.hpp"
#include "srma/data.hpp"
#include "srma/gradcheck.hpp"
#include "srma/invariance.hpp"
#include "srma/mla.hpp"
#include "srma/objective.hpp"
#include "srma/semantic_stats.hpp"
#include "srma/srm.hpp"
#include "srma/toynet.hpp"

using namespace srma;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Report lines go to stdout and, when set, to a report file.
std::ofstream report_file;

void emit(const std::string& line) {
  std::cout << line << std::endl;
  if (report_file.is_open()) report_file << line << std::endl;
}

struct Tally {
  bool property_failed = false;
  bool trend_failed = false;

  void report(int id, const std::string& title, const Outcome& o, bool trend = false) {
    std::ostringstream os;
    os << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << title << ": " << o.detail;
    emit(os.str());
    if (!o.pass) (trend ? trend_failed : property_failed) = true;
  }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor3 random_tensor(std::size_t c, std::size_t h, std::size_t w, Rng& rng, double mean, double sd) {
  std::normal_distribution<double> g(mean, sd);
  Tensor3 t(c, h, w);
  for (double& v : t.values()) v = g(rng);
  return t;
}

LabelMap random_labels(std::size_t h, std::size_t w, int cats, Rng& rng, double ignore_rate) {
  std::uniform_int_distribution<int> u(0, cats - 1);
  std::bernoulli_distribution ig(ignore_rate);
  LabelMap l(h, w, cats);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = ig(rng) ? kIgnoreLabel : static_cast<std::uint8_t>(u(rng));
  return l;
}

// Naive per-region moments: population std floored like the library.
void naive_moments(const Tensor3& f, const LabelMap& l, int c, std::vector<double>& mean, std::vector<double>& sd) {
  mean.assign(f.channels(), 0.0);
  sd.assign(f.channels(), 0.0);
  for (std::size_t d = 0; d < f.channels(); ++d) {
    double s = 0.0, n = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (l[i] == c) {
        s += f.plane(d)[i];
        n += 1.0;
      }
    }
    mean[d] = s / n;
    double v = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (l[i] == c) v += std::pow(f.plane(d)[i] - mean[d], 2);
    }
    sd[d] = std::max(std::sqrt(v / n), kEpsStd);
  }
}

Outcome moment_transfer() {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::uniform_int_distribution<std::size_t> side(4, 12), chans(1, 8);
  std::uniform_int_distribution<int> cats(1, 5);
  double worst_moment = 0.0, worst_content = 0.0, worst_degenerate = 0.0;
  std::size_t degenerate = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = chans(rng), h = side(rng), w = side(rng);
    const FeatureMap f{random_tensor(c, h, w, rng, 0.5, 2.0), 0};
    const LabelMap l = random_labels(h, w, cats(rng), rng, 0.1);
    const auto present = stats::present_categories(l);
    if (present.empty()) continue;
    std::vector<srm::RegionTrace> trace;
    Rng draw(static_cast<std::uint64_t>(trial));
    const FeatureMap out = srm::rearrange(f, l, draw, srm::kDefaultAlpha, &trace);

    std::vector<std::vector<double>> mu(present.size()), sd(present.size());
    for (std::size_t k = 0; k < present.size(); ++k) naive_moments(f.values, l, present[k], mu[k], sd[k]);
    for (std::size_t k = 0; k < present.size(); ++k) {
      const auto& wts = trace[k].weights;
      std::vector<double> got_mu, got_sd;
      naive_moments(out.values, l, present[k], got_mu, got_sd);
      for (std::size_t d = 0; d < c; ++d) {
        double want_mu = 0.0, want_sd = 0.0;
        for (std::size_t j = 0; j < present.size(); ++j) {
          want_mu += wts[j] * mu[j][d];
          want_sd += wts[j] * sd[j][d];
        }
        worst_moment = std::max(worst_moment, std::abs(got_mu[d] - want_mu));
        // A region without spread (one pixel, or constant) cannot take on a second moment.
        if (sd[k][d] > kEpsStd) {
          worst_moment = std::max(worst_moment, std::abs(got_sd[d] - want_sd));
        } else {
          ++degenerate;
          worst_degenerate = std::max(worst_degenerate, std::abs(got_sd[d] - want_sd));
        }
        for (std::size_t i = 0; i < l.size(); ++i) {
          if (l[i] != present[k]) continue;
          const double zb = (f.values.plane(d)[i] - mu[k][d]) / sd[k][d];
          const double za = (out.values.plane(d)[i] - got_mu[d]) / got_sd[d];
          worst_content = std::max(worst_content, std::abs(za - zb));
        }
      }
    }
  }
  const double dt = seconds_since(t0);
  return {worst_moment <= 1e-4 && worst_content <= 1e-4 && dt < 30.0,
          "moment error " + fmt(worst_moment) + ", content error " + fmt(worst_content) + ", " + fmt(dt) +
              " s (" + std::to_string(degenerate) + " zero-spread region channels, std error up to " +
              fmt(worst_degenerate) + ")"};
}

Outcome gradients() {
  Outcome o;
  for (auto loss : net::all_losses()) {
    const auto r = net::gradcheck(loss, 3, 4, 50, 1);
    o.pass = o.pass && r.max_rel_error < 1e-4;
    o.detail += std::string(net::loss_name(loss)) + " " + fmt(r.max_rel_error, 2) + " ";
  }
  o.detail = "max relative error " + o.detail;
  o.detail.pop_back();
  return o;
}

Outcome loss_bounds() {
  Rng rng(303);
  std::normal_distribution<double> g(0.0, 3.0);
  double lo = 0.0, hi = 0.0, self = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Tensor3 a(4, 2, 2), b(4, 2, 2);
    for (double& v : a.values()) v = g(rng);
    for (double& v : b.values()) v = g(rng);
    if (i % 10 == 0) b.values()[0] += 40.0;  // near one-hot
    const Tensor3 p = objective::softmax(a), q = objective::softmax(b);
    const double js = objective::js_consistency(p, q);
    lo = std::min(lo, js);
    hi = std::max(hi, js);
    self = std::max(self, std::abs(objective::js_consistency(p, p)));
  }
  bool align_ok = true;
  for (int i = 0; i < 200; ++i) {
    const Tensor3 x = random_tensor(3, 4, 4, rng, 0.0, 1.0);
    const Tensor3 y = random_tensor(3, 4, 4, rng, 0.5, 2.0);
    const LabelMap l = random_labels(4, 4, 3, rng, 0.1);
    align_ok = align_ok && mla::global_term(x, y) >= 0.0 && mla::regional_term(x, y, l) >= 0.0 &&
               mla::local_term(x, y) >= 0.0 && mla::global_term(x, x) == 0.0 &&
               mla::regional_term(x, x, l) == 0.0 && mla::local_term(x, x) == 0.0;
  }
  const bool js_ok = lo >= 0.0 && hi <= std::numbers::ln2 && self <= 1e-9;
  return {js_ok && align_ok, "JS range [" + fmt(lo) + ", " + fmt(hi, 5) + "], self " + fmt(self) +
                                 ", alignment terms " + (align_ok ? "non-negative and zero on equal inputs" : "violated")};
}

Outcome style_elimination() {
  Rng rng(404);
  std::uniform_real_distribution<double> mean(-5.0, 5.0), scale(0.01, 10.0);
  double worst_mean = 0.0, worst_std = 0.0, worst_idem = 0.0;
  for (int i = 0; i < 100; ++i) {
    Tensor3 x = random_tensor(6, 9, 7, rng, 0.0, 1.0);
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const double m = mean(rng), s = scale(rng);
      for (double& v : x.plane(c)) v = m + s * v;
    }
    const FeatureMap once = mla::style_eliminate(FeatureMap{x, 0});
    const FeatureMap twice = mla::style_eliminate(once);
    for (std::size_t c = 0; c < x.channels(); ++c) {
      double s = 0.0, q = 0.0;
      for (double v : once.values.plane(c)) s += v;
      const double n = static_cast<double>(once.values.plane_size());
      for (double v : once.values.plane(c)) q += (v - s / n) * (v - s / n);
      worst_mean = std::max(worst_mean, std::abs(s / n));
      worst_std = std::max(worst_std, std::abs(std::sqrt(q / n) - 1.0));
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      worst_idem = std::max(worst_idem, std::abs(twice.values.values()[k] - once.values.values()[k]));
    }
  }
  return {worst_mean < 1e-5 && worst_std <= 1e-4 && worst_idem <= 1e-5,
          "mean " + fmt(worst_mean) + ", std deviation " + fmt(worst_std) + ", idempotence " + fmt(worst_idem)};
}

double naive_chamfer(const inv::FeatureSampleSet& a, const inv::FeatureSampleSet& b) {
  auto one_way = [](const inv::FeatureSampleSet& x, const inv::FeatureSampleSet& y) {
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

Outcome chamfer() {
  Rng rng(505);
  std::uniform_int_distribution<std::size_t> n(1, 50), dim(1, 8);
  std::normal_distribution<double> g;
  double worst = 0.0, asym = 0.0;
  for (int i = 0; i < 100; ++i) {
    inv::FeatureSampleSet a, b;
    a.dim = b.dim = dim(rng);
    for (std::size_t k = n(rng) * a.dim; k > 0; --k) a.values.push_back(g(rng));
    for (std::size_t k = n(rng) * b.dim; k > 0; --k) b.values.push_back(g(rng));
    const double d = inv::chamfer_distance(a, b);
    worst = std::max(worst, std::abs(d - naive_chamfer(a, b)));
    asym = std::max(asym, std::abs(d - inv::chamfer_distance(b, a)));
  }
  const double s0 = inv::invariance_score(0.0);
  const double s3 = inv::invariance_score(3.0, 0.01);
  const bool ok = worst <= 1e-9 && asym <= 1e-12 && s0 == 1.0 && std::abs(s3 - std::exp(-0.03)) <= 1e-12;
  return {ok, "oracle error " + fmt(worst) + ", asymmetry " + fmt(asym) + ", score(0) " + fmt(s0) +
                  ", score(3) " + fmt(s3, 12)};
}

Outcome analyzer() {
  const auto spec = data::random_style_spec("same", 32, 4, 3, 4);
  Rng rng(1);
  const auto samples = data::generate_domain(spec, 8, rng);
  const net::SegmentationNet model{net::NetworkConfig{}};
  inv::AnalyzeOptions opt;
  opt.trials = 5;
  opt.samples = 100;
  const auto same = inv::analyze(model, samples, samples, opt);

  const auto other_spec = data::random_style_spec("other", 32, 4, 3, 5);
  Rng rng2(2);
  const auto other = data::generate_domain(other_spec, 8, rng2);
  const auto diff = inv::analyze(model, samples, other, opt);

  bool ok = true;
  std::string detail = "identical";
  for (auto l : inv::kLevels) {
    const double s = same.level(l).mean_score;
    ok = ok && s >= 0.99;
    detail += " " + std::string(inv::level_name(l)) + " " + fmt(s, 4);
    for (const auto* r : {&same, &diff}) {
      for (const auto& t : r->level(l).trials) ok = ok && t.score > 0.0 && t.score <= 1.0;
    }
  }
  detail += "; shifted";
  for (auto l : inv::kLevels) detail += " " + fmt(diff.level(l).mean_score, 4);
  return {ok, detail};
}

Outcome miou_oracle() {
  LabelMap truth(2, 2, 3, 0), pred(2, 2, 3, 0);
  truth[2] = truth[3] = 1;
  pred[1] = pred[2] = pred[3] = 1;
  const std::vector<LabelMap> p{pred}, t{truth};
  const auto r = data::miou(p, t, 3);
  const bool values = r.per_category[0] && std::abs(*r.per_category[0] - 0.5) <= 1e-12 && r.per_category[1] &&
                      std::abs(*r.per_category[1] - 2.0 / 3.0) <= 1e-12 && std::abs(r.mean - 0.5833333) <= 1e-6;
  const bool absent = !r.per_category[2] && r.defined == 2;
  const std::string table = data::format_iou_table(r);
  const bool dash = table.find("2\t-") != std::string::npos;
  return {values && absent && dash, "IoU " + fmt(r.per_category[0].value_or(-1)) + ", " +
                                        fmt(r.per_category[1].value_or(-1), 4) + ", mean " + fmt(r.mean, 7) +
                                        ", absent category " + (dash ? "shown as -" : "not excluded")};
}

Outcome freeze_and_determinism() {
  const fs::path root = fs::temp_directory_path() / "srma_acceptance_freeze";
  fs::remove_all(root);
  const auto spec = data::random_style_spec("src", 32, 4, 11, 12);
  Rng rng(3);
  data::save_dataset(data::generate_domain(spec, 8, rng), root / "data", spec);

  cli::RunConfig cfg;
  cfg.train.max_steps = 30;
  cfg.train_data = root / "data";
  auto run = [&](const std::string& name) {
    cfg.out_dir = root / name;
    cli::run_training(cfg, true);
    std::ifstream in(cfg.out_dir / "summary.json");
    return nlohmann::json::parse(in);
  };
  const auto a = run("a");
  const auto b = run("b");
  fs::remove_all(root);
  const bool frozen = a.at("layer0_checksum_before") == a.at("layer0_checksum_after") &&
                      a.at("twin_checksum_before") == a.at("twin_checksum_after");
  const bool same = a.at("checkpoint_hash") == b.at("checkpoint_hash");
  return {frozen && same, std::string("layer 0 and twin ") + (frozen ? "unchanged" : "changed") +
                              ", rerun hash " + a.at("checkpoint_hash").get<std::string>() +
                              (same ? " == " : " != ") + b.at("checkpoint_hash").get<std::string>()};
}

// ---------------------------------------------------------------------------
// Training trends

enum Arm { baseline, srm_only, full, no_global, no_regional, no_local, kArms };
constexpr const char* kArmNames[kArms] = {"baseline", "SRM only", "full", "w/o global", "w/o regional",
                                          "w/o local"};

struct TrendSetup {
  std::size_t seeds = 5;
  std::size_t steps = 600;
  std::size_t train_images = 64;
  std::size_t target_images = 32;
  std::size_t targets = 3;
  int categories = 4;
  std::size_t image_size = 32;
};

struct Seeded {
  std::vector<data::SegSample> source;
  std::vector<data::SegSample> source_val;
  std::vector<std::vector<data::SegSample>> targets;
};

// Targets reuse the training layouts under new per-category styles.
Seeded make_domains(const TrendSetup& s, std::uint64_t seed) {
  Seeded d;
  const auto src = data::random_style_spec("source", s.image_size, s.categories, 100 + seed, 1000 + seed);
  Rng r(seed);
  d.source = data::generate_domain(src, s.train_images, r);
  auto val = src;
  val.layout_seed = 9000 + seed;
  Rng rv(seed + 1);
  d.source_val = data::generate_domain(val, s.target_images, rv);
  for (std::size_t t = 0; t < s.targets; ++t) {
    const auto spec = data::random_style_spec("target" + std::to_string(t), s.image_size, s.categories, 100 + seed,
                                              5000 + 10 * seed + t);
    Rng rt(77 + t);
    d.targets.push_back(data::generate_domain(spec, s.target_images, rt));
  }
  return d;
}

void configure(Arm arm, net::NetworkConfig& nc, net::TrainConfig& tc) {
  switch (arm) {
    case baseline:
      tc.ablation = {false, false, false, false, false};
      nc.style_elimination = false;
      break;
    case srm_only:
      tc.ablation = {true, false, false, false, false};
      nc.style_elimination = false;
      break;
    case no_global: tc.ablation.mla_global = false; break;
    case no_regional: tc.ablation.mla_regional = false; break;
    case no_local: tc.ablation.mla_local = false; break;
    default: break;
  }
}

struct TrendResults {
  std::array<double, kArms> target{};
  std::array<double, kArms> source{};
  std::array<double, kArms> seconds{};
};

TrendResults run_trends(const TrendSetup& s) {
  TrendResults res;
  const double inv = 1.0 / static_cast<double>(s.seeds);
  for (std::size_t seed = 1; seed <= s.seeds; ++seed) {
    const Seeded d = make_domains(s, seed);
    for (int a = 0; a < kArms; ++a) {
      net::NetworkConfig nc;
      nc.num_classes = s.categories;
      nc.seed = seed;
      net::TrainConfig tc;
      tc.max_steps = s.steps;
      tc.seed = seed;
      configure(static_cast<Arm>(a), nc, tc);
      const auto t0 = Clock::now();
      net::SegmentationNet model(nc);
      net::train(model, d.source, tc);
      double target = 0.0;
      for (const auto& t : d.targets) target += 100.0 * cli::evaluate(model, t).mean / static_cast<double>(d.targets.size());
      const double source = 100.0 * cli::evaluate(model, d.source_val).mean;
      res.target[a] += inv * target;
      res.source[a] += inv * source;
      res.seconds[a] += seconds_since(t0);
      std::ostringstream os;
      os << "      seed " << seed << " " << std::left << std::setw(13) << kArmNames[a] << std::right << " target "
         << std::fixed << std::setprecision(2) << target << " source " << source;
      emit(os.str());
    }
  }
  std::string means = "      mean target mIoU:";
  for (int a = 0; a < kArms; ++a) means += " " + std::string(kArmNames[a]) + " " + fmt(res.target[a], 4) + ";";
  emit(means);
  return res;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  TrendSetup setup;
  bool strict = false, skip_trends = false;
  std::string report_path;
  app.add_option("--seeds", setup.seeds, "Seeds for the training trends")->check(CLI::PositiveNumber);
  app.add_option("--steps", setup.steps, "Training steps per run")->check(CLI::PositiveNumber);
  app.add_flag("--strict", strict, "Trend failures also fail the exit status");
  app.add_flag("--skip-trends", skip_trends, "Only run the exact property checks");
  app.add_option("--report", report_path, "Also write the report lines to this file");
  CLI11_PARSE(app, argc, argv);
  if (!report_path.empty()) {
    report_file.open(report_path);
    if (!report_file) {
      std::cerr << "cannot write " << report_path << '\n';
      return 1;
    }
  }

  Tally tally;
  tally.report(1, "moment transfer", moment_transfer());
  tally.report(2, "gradient suite", gradients());
  tally.report(3, "loss bounds", loss_bounds());
  tally.report(4, "style elimination", style_elimination());
  tally.report(5, "chamfer oracle", chamfer());
  tally.report(6, "invariance analyzer", analyzer());
  tally.report(7, "mIoU oracle", miou_oracle());

  if (!skip_trends) {
    const TrendResults r = run_trends(setup);
    const auto& t = r.target;
    const double budget = r.seconds[baseline] + r.seconds[srm_only] + r.seconds[full];
    Outcome ablation;
    ablation.pass = t[full] > t[srm_only] && t[srm_only] > t[baseline] && t[full] - t[baseline] >= 5.0 &&
                    budget <= 15 * 60;
    ablation.detail = "baseline " + fmt(t[baseline], 4) + ", SRM only " + fmt(t[srm_only], 4) + ", full " +
                      fmt(t[full], 4) + ", full - baseline " + fmt(t[full] - t[baseline], 3) + ", " +
                      fmt(budget, 3) + " s";
    tally.report(8, "ablation trend", ablation, true);
    tally.report(9, "freeze and determinism", freeze_and_determinism());

    Outcome levels;
    for (Arm a : {no_global, no_regional, no_local}) {
      levels.pass = levels.pass && t[a] <= t[full] + 0.5;
      levels.detail += std::string(kArmNames[a]) + " " + fmt(t[a], 4) + ", ";
    }
    levels.detail += "full " + fmt(t[full], 4) + " (margin 0.5)";
    tally.report(10, "level ablation", levels, true);

    const Outcome order{r.source[baseline] >= t[baseline],
                        "baseline source " + fmt(r.source[baseline], 4) + " >= target " + fmt(t[baseline], 4)};
    emit(std::string(order.pass ? "PASS" : "FAIL") + "   -  evaluation ordering: " + order.detail);
  } else {
    tally.report(9, "freeze and determinism", freeze_and_determinism());
    emit("SKIP   8  ablation trend");
    emit("SKIP  10  level ablation");
  }

  const bool failed = tally.property_failed || (strict && tally.trend_failed);
  return failed ? 1 : 0;
}
