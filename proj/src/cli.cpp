#include "srma/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "srma/gradcheck.hpp"
#include "srma/invariance.hpp"
#include "srma/semantic_stats.hpp"
#include "srma/srm.hpp"

namespace srma::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig RunConfig::from_text(const std::string& text, const fs::path& base_dir) {
  const KeyValue kv = KeyValue::parse(text);
  RunConfig c;
  c.network = net::NetworkConfig::read(kv);
  c.train = net::TrainConfig::read(kv);
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  const std::string data = kv.get_string("train_data", "");
  if (!data.empty()) c.train_data = resolve(data);
  const std::string out = kv.get_string("out_dir", "");
  if (!out.empty()) c.out_dir = resolve(out);
  const auto unused = kv.unused();
  if (!unused.empty()) throw std::invalid_argument("unknown config key '" + unused.front() + "'");
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path.parent_path());
}

std::string RunConfig::to_text() const {
  KeyValue kv;
  network.write(kv);
  train.write(kv);
  kv.set("train_data", train_data.string());
  kv.set("out_dir", out_dir.string());
  return kv.to_text();
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

data::Dataset load_nonempty(const fs::path& dir, int hint = 0) {
  data::Dataset ds = data::load_dataset(dir, hint);
  if (ds.samples.empty()) throw std::runtime_error("dataset " + dir.string() + " is empty");
  return ds;
}

void require_compatible(const net::SegmentationNet& model, const data::Dataset& ds, const fs::path& dir) {
  if (ds.num_categories != model.config().num_classes) {
    throw std::runtime_error("dataset " + dir.string() + " has " + std::to_string(ds.num_categories) +
                             " categories, checkpoint expects " +
                             std::to_string(model.config().num_classes));
  }
}

std::string dataset_name(const data::Dataset& ds, const fs::path& dir) {
  if (!ds.domain.empty()) return ds.domain;
  return fs::path(dir).lexically_normal().filename().string();
}

json stats_json(const stats::RegionStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

}  // namespace

fs::path run_training(const RunConfig& cfg, bool quiet) {
  if (cfg.train_data.empty()) throw std::invalid_argument("config needs train_data");
  const data::Dataset ds = load_nonempty(cfg.train_data, cfg.network.num_classes);
  if (ds.num_categories != cfg.network.num_classes) {
    throw std::invalid_argument("train_data has " + std::to_string(ds.num_categories) +
                                " categories but num_classes = " + std::to_string(cfg.network.num_classes));
  }
  fs::create_directories(cfg.out_dir);
  RunConfig absolute = cfg;
  absolute.train_data = fs::absolute(cfg.train_data).lexically_normal();
  absolute.out_dir = fs::absolute(cfg.out_dir).lexically_normal();
  const std::string echo = absolute.to_text();
  write_file(cfg.out_dir / "config.txt", echo);

  net::SegmentationNet model(cfg.network);
  const std::uint64_t layer0_before = model.layer0_checksum();
  const std::uint64_t twin_before = model.twin_checksum();

  std::ofstream metrics(cfg.out_dir / "metrics.ndjson");
  if (!metrics) throw std::runtime_error("cannot write metrics log");
  auto sink = [&](const net::StepRecord& r) {
    metrics << net::to_json(r).dump() << '\n';
    if (!quiet && (r.step % 50 == 0 || r.step + 1 == cfg.train.max_steps)) {
      std::cerr << "step " << r.step << " loss " << r.loss.total << '\n';
    }
  };
  net::train(model, ds.samples, cfg.train, sink);
  metrics.flush();

  KeyValue run_kv;
  cfg.train.write(run_kv);
  const fs::path ckpt = cfg.out_dir / "checkpoint.bin";
  net::save_checkpoint(model, ckpt, run_kv.to_text());

  const json summary = {{"checkpoint_hash", net::hex64(net::file_hash(ckpt))},
                        {"layer0_checksum_before", net::hex64(layer0_before)},
                        {"layer0_checksum_after", net::hex64(model.layer0_checksum())},
                        {"twin_checksum_before", net::hex64(twin_before)},
                        {"twin_checksum_after", net::hex64(model.twin_checksum())},
                        {"steps", cfg.train.max_steps},
                        {"samples", ds.samples.size()}};
  write_file(cfg.out_dir / "summary.json", summary.dump(2) + "\n");
  return ckpt;
}

data::IouReport evaluate(const net::SegmentationNet& model, std::span<const data::SegSample> samples) {
  if (samples.empty()) throw std::invalid_argument("cannot evaluate an empty dataset");
  data::ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : samples) cm.add(model.predict(s.image), s.labels);
  return data::summarize(cm);
}

namespace {

struct GenerateArgs {
  std::string out, name = "source", spec_file;
  std::size_t count = 64, size = 32, cells = 6;
  int categories = 4;
  std::uint64_t layout_seed = 1, style_seed = 1, seed = 1;
  bool unpaired = false;
};

int cmd_generate(const GenerateArgs& a) {
  data::DomainSpec spec;
  if (!a.spec_file.empty()) {
    std::ifstream in(a.spec_file);
    if (!in) throw std::runtime_error("cannot open " + a.spec_file);
    spec = data::domain_spec_from_json(json::parse(in));
  } else {
    spec = data::random_style_spec(a.name, a.size, a.categories, a.layout_seed, a.style_seed);
    spec.layout_cells = a.cells;
    spec.paired = !a.unpaired;
  }
  spec.validate();
  Rng rng(a.seed);
  const auto samples = data::generate_domain(spec, a.count, rng);
  data::save_dataset(samples, a.out, spec);
  std::cout << "wrote " << samples.size() << " samples to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, out, data;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  bool no_srm = false, no_global = false, no_regional = false, no_local = false, no_pc = false;
  bool no_style_elim = false, unfreeze = false, quiet = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (!a.data.empty()) cfg.train_data = a.data;
  if (a.steps) cfg.train.max_steps = *a.steps;
  if (a.seed) {
    cfg.train.seed = *a.seed;
    cfg.network.seed = *a.seed;
  }
  if (a.no_srm) cfg.train.ablation.srm = false;
  if (a.no_global) cfg.train.ablation.mla_global = false;
  if (a.no_regional) cfg.train.ablation.mla_regional = false;
  if (a.no_local) cfg.train.ablation.mla_local = false;
  if (a.no_pc) cfg.train.ablation.pc = false;
  if (a.no_style_elim) cfg.network.style_elimination = false;
  if (a.unfreeze) cfg.network.frozen_layer0 = false;
  cfg.train.validate();
  cfg.network.validate();
  const fs::path ckpt = run_training(cfg, a.quiet);
  std::cout << "checkpoint " << ckpt.string() << " hash " << net::hex64(net::file_hash(ckpt)) << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, out;
  std::vector<std::string> data;
};

int cmd_eval(const EvalArgs& a) {
  const net::SegmentationNet model = net::load_checkpoint(a.checkpoint);
  json reports = json::array();
  for (const auto& dir : a.data) {
    const data::Dataset ds = load_nonempty(dir, model.config().num_classes);
    require_compatible(model, ds, dir);
    const data::IouReport r = evaluate(model, ds.samples);
    const std::string name = dataset_name(ds, dir);
    std::cout << "== " << name << " (" << ds.samples.size() << " samples)\n" << data::format_iou_table(r);
    json per = json::array();
    for (const auto& v : r.per_category) per.push_back(v ? json(*v) : json(nullptr));
    reports.push_back({{"dataset", name}, {"path", dir}, {"per_category", per}, {"mean", r.mean},
                       {"defined", r.defined}, {"samples", ds.samples.size()}});
  }
  if (!a.out.empty()) write_file(a.out, json{{"checkpoint", a.checkpoint}, {"reports", reports}}.dump(2) + "\n");
  return 0;
}

struct AnalyzeArgs {
  std::string checkpoint, source, out, table;
  std::vector<std::string> targets;
  inv::AnalyzeOptions options;
  std::size_t layer = 4;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const net::SegmentationNet model = net::load_checkpoint(a.checkpoint);
  const data::Dataset src = load_nonempty(a.source, model.config().num_classes);
  require_compatible(model, src, a.source);
  const inv::DomainFeatures src_features = inv::extract_features(model, src.samples, a.layer);

  std::vector<std::pair<std::string, inv::InvarianceReport>> rows;
  json targets = json::array();
  for (const auto& dir : a.targets) {
    const data::Dataset tgt = load_nonempty(dir, model.config().num_classes);
    require_compatible(model, tgt, dir);
    const inv::InvarianceReport r =
        inv::analyze(src_features, inv::extract_features(model, tgt.samples, a.layer), a.options);
    const std::string name = dataset_name(tgt, dir);
    json j = inv::to_json(r);
    j["target"] = name;
    targets.push_back(j);
    rows.emplace_back(name, r);
  }
  const std::string table = inv::format_invariance_table(rows);
  std::cout << table;
  if (!a.table.empty()) write_file(a.table, table);
  if (!a.out.empty()) {
    const json report = {{"checkpoint", a.checkpoint},   {"source", dataset_name(src, a.source)},
                         {"layer", a.layer},             {"trials", a.options.trials},
                         {"samples_per_trial", a.options.samples}, {"gamma", a.options.gamma},
                         {"targets", targets}};
    write_file(a.out, report.dump(2) + "\n");
  }
  return 0;
}

struct PreviewArgs {
  std::string data, checkpoint, out, id;
  std::size_t index = 0;
  double alpha = srm::kDefaultAlpha;
  std::uint64_t seed = 1;
  std::uint64_t init_seed = 1;
};

int cmd_preview(const PreviewArgs& a) {
  const data::Dataset ds = load_nonempty(a.data);
  const data::SegSample* sample = nullptr;
  if (!a.id.empty()) {
    for (const auto& s : ds.samples) {
      if (s.id == a.id) sample = &s;
    }
    if (!sample) throw std::runtime_error("no sample with id " + a.id);
  } else {
    if (a.index >= ds.samples.size()) throw std::out_of_range("sample index out of range");
    sample = &ds.samples[a.index];
  }

  std::optional<net::SegmentationNet> model;
  if (!a.checkpoint.empty()) {
    model.emplace(net::load_checkpoint(a.checkpoint));
  } else {
    net::NetworkConfig cfg;
    cfg.seed = a.init_seed;
    cfg.num_classes = std::max(ds.num_categories, 1);
    model.emplace(cfg);
  }
  const FeatureMap shallow = model->shallow(sample->image);
  const LabelMap labels = stats::resize_labels(sample->labels, shallow.height(), shallow.width());
  Rng rng(a.seed);
  std::vector<srm::RegionTrace> trace;
  const FeatureMap out = srm::rearrange(shallow, labels, rng, a.alpha, &trace);

  json regions = json::array();
  double worst = 0.0;
  for (const auto& t : trace) {
    const stats::RegionStats achieved = stats::region_moments(out.values, labels, t.original.category);
    double err = 0.0;
    for (std::size_t d = 0; d < achieved.mean.size(); ++d) {
      err = std::max({err, std::abs(achieved.mean[d] - t.synthesized.mean[d]),
                      std::abs(achieved.std[d] - t.synthesized.std[d])});
    }
    worst = std::max(worst, err);
    std::vector<int> mix_categories;
    for (const auto& r : trace) mix_categories.push_back(r.original.category);
    regions.push_back({{"category", t.original.category},
                       {"pixel_count", t.original.pixel_count},
                       {"original", stats_json(t.original)},
                       {"weights", {{"categories", mix_categories}, {"values", t.weights}}},
                       {"synthesized", stats_json(t.synthesized)},
                       {"achieved", stats_json(achieved)},
                       {"max_abs_error", err}});
  }
  const json report = {{"sample", sample->id}, {"alpha", a.alpha},   {"seed", a.seed},
                       {"layer", 0},           {"regions", regions}, {"max_abs_error", worst}};
  if (a.out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_file(a.out, report.dump(2) + "\n");
    std::cout << "wrote " << trace.size() << " regions to " << a.out << " (max error " << worst << ")\n";
  }
  return 0;
}

struct ExportArgs {
  std::string checkpoint, out, level = "regional";
  std::vector<std::string> data;
  std::size_t layer = 4;
};

int cmd_export(const ExportArgs& a) {
  const auto level = inv::parse_level(a.level);
  if (!level) throw std::invalid_argument("level must be global, local or regional");
  if (a.layer > net::kDeepLayers) throw std::invalid_argument("layer must be in 0..4");
  const net::SegmentationNet model = net::load_checkpoint(a.checkpoint);
  const std::size_t dim =
      a.layer == 0 ? model.config().channels[0] : model.config().channels[a.layer];

  std::ofstream os(a.out);
  if (!os) throw std::runtime_error("cannot write " + a.out);
  os << "# layer=" << a.layer << " level=" << a.level << " dim=" << dim << '\n';
  os << "domain,sample,category";
  for (std::size_t d = 0; d < dim; ++d) os << ",f" << d;
  os << '\n';
  os << std::setprecision(9);
  std::size_t rows = 0;
  auto emit = [&](const std::string& domain, const std::string& id, const std::string& cat,
                  std::span<const double> v) {
    os << domain << ',' << id << ',' << cat;
    for (double x : v) os << ',' << x;
    os << '\n';
    ++rows;
  };

  for (const auto& dir : a.data) {
    data::Dataset ds = load_nonempty(dir, model.config().num_classes);
    require_compatible(model, ds, dir);
    std::sort(ds.samples.begin(), ds.samples.end(),
              [](const data::SegSample& x, const data::SegSample& y) { return x.id < y.id; });
    const std::string domain = dataset_name(ds, dir);
    for (const auto& s : ds.samples) {
      const net::ForwardResult r = model.forward(s.image);
      const Tensor3& f = a.layer == 0 ? r.shallow.values : r.features[a.layer - 1].values;
      const LabelMap labels = stats::resize_labels(s.labels, f.height(), f.width());
      if (*level == inv::Level::global) {
        emit(domain, s.id, "-", stats::gap(f));
        continue;
      }
      for (int c : stats::present_categories(labels)) {
        if (*level == inv::Level::regional) {
          emit(domain, s.id, std::to_string(c), stats::sap(f, labels, c));
        } else {
          const stats::PixelSet px = stats::split_by_semantic(f, labels, c);
          for (std::size_t i = 0; i < px.count(); ++i) emit(domain, s.id, std::to_string(c), px.row(i));
        }
      }
    }
  }
  std::cout << "wrote " << rows << " rows to " << a.out << '\n';
  return 0;
}

struct GradcheckArgs {
  std::string loss = "all";
  std::size_t trials = 50, size = 3;
  std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  constexpr double kTolerance = 1e-4;
  std::vector<net::GradcheckReport> reports;
  if (a.loss == "all" || a.loss == "network") {
    if (a.loss == "all") {
      for (auto l : net::all_losses()) reports.push_back(net::gradcheck(l, a.size, 4, a.trials, a.seed));
    }
    reports.push_back(net::network_gradcheck({}, {}, 16, 60, a.seed));
  } else {
    const auto l = net::parse_loss(a.loss);
    if (!l) throw std::invalid_argument("unknown loss '" + a.loss + "'");
    reports.push_back(net::gradcheck(*l, a.size, 4, a.trials, a.seed));
  }
  bool ok = true;
  std::cout << "loss\ttrials\tmax_rel_error\n";
  for (const auto& r : reports) {
    std::cout << r.loss << '\t' << r.trials << '\t' << r.max_rel_error << '\n';
    ok = ok && r.max_rel_error < kTolerance;
  }
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Semantic-region style rearrangement and multi-level alignment on a toy segmentation net"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic domain to a dataset directory");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--name", gen.name, "Domain name");
  g->add_option("--count", gen.count, "Number of samples")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "Image side in pixels");
  g->add_option("--categories", gen.categories, "Number of categories");
  g->add_option("--cells", gen.cells, "Layout cells per image");
  g->add_option("--layout-seed", gen.layout_seed, "Seed of the label layouts");
  g->add_option("--style-seed", gen.style_seed, "Seed of the per-category styles");
  g->add_option("--seed", gen.seed, "Seed of texture phases and noise");
  g->add_flag("--unpaired", gen.unpaired, "Draw layouts from --seed instead of --layout-seed");
  g->add_option("--spec", gen.spec_file, "Domain spec JSON (overrides the style options)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a network and write a run directory");
  t->add_option("config", tr.config, "Key-value config file");
  t->add_option("--out", tr.out, "Run directory (overrides out_dir)");
  t->add_option("--data", tr.data, "Training dataset (overrides train_data)");
  t->add_option("--steps", tr.steps, "Override max_steps");
  t->add_option("--seed", tr.seed, "Override seed and init_seed");
  t->add_flag("--no-srm", tr.no_srm, "Disable the rearranged branch");
  t->add_flag("--no-mla-global", tr.no_global, "Disable global alignment");
  t->add_flag("--no-mla-regional", tr.no_regional, "Disable regional alignment");
  t->add_flag("--no-mla-local", tr.no_local, "Disable local alignment");
  t->add_flag("--no-pc", tr.no_pc, "Disable prediction consistency");
  t->add_flag("--no-style-elim", tr.no_style_elim, "Disable style elimination after layer 0");
  t->add_flag("--unfreeze-layer0", tr.unfreeze, "Train layer 0");
  t->add_flag("--quiet", tr.quiet, "No progress output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Per-category IoU of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Dataset directory (repeatable)")->required();
  e->add_option("--out", ev.out, "JSON report");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Domain-invariance scores of layer-4 features");
  a->add_option("--checkpoint", an.checkpoint)->required();
  a->add_option("--source", an.source)->required();
  a->add_option("--target", an.targets, "Target dataset (repeatable)")->required();
  a->add_option("--trials", an.options.trials)->check(CLI::PositiveNumber);
  a->add_option("--samples", an.options.samples);
  a->add_option("--gamma", an.options.gamma);
  a->add_option("--seed", an.options.seed);
  a->add_option("--layer", an.layer)->check(CLI::Range(0, 4));
  a->add_flag("--independent-sampling", an.options.independent_sampling,
              "Subsample source and target sets with different seeds");
  a->add_option("--out", an.out, "JSON report");
  a->add_option("--table", an.table, "TSV table (targets x levels)");

  PreviewArgs pv;
  auto* p = app.add_subcommand("preview-rearrange", "Report the style rearrangement of one sample");
  p->add_option("--data", pv.data)->required();
  p->add_option("--index", pv.index);
  p->add_option("--id", pv.id);
  p->add_option("--checkpoint", pv.checkpoint, "Layer 0 from this checkpoint (default: fresh init)");
  p->add_option("--init-seed", pv.init_seed);
  p->add_option("--alpha", pv.alpha);
  p->add_option("--seed", pv.seed);
  p->add_option("--out", pv.out, "JSON report (default stdout)");

  ExportArgs ex;
  auto* x = app.add_subcommand("export-embeddings", "Write per-sample feature vectors as CSV");
  x->add_option("--checkpoint", ex.checkpoint)->required();
  x->add_option("--data", ex.data, "Dataset directory (repeatable)")->required();
  x->add_option("--layer", ex.layer)->check(CLI::Range(0, 4));
  x->add_option("--level", ex.level)->check(CLI::IsMember({"global", "local", "regional"}));
  x->add_option("--out", ex.out)->required();

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  c->add_option("--loss", gc.loss, "global|regional|local|mla|pc|task|network|all");
  c->add_option("--trials", gc.trials);
  c->add_option("--size", gc.size);
  c->add_option("--seed", gc.seed);

  auto* dc = app.add_subcommand("default-config", "Print the default training config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*a) return cmd_analyze(an);
    if (*p) return cmd_preview(pv);
    if (*x) return cmd_export(ex);
    if (*c) return cmd_gradcheck(gc);
    if (*dc) {
      std::cout << RunConfig{}.to_text();
      return 0;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"srma"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace srma::cli
