#include "srma/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>

#include "srma/mla.hpp"
#include "srma/objective.hpp"

namespace srma::net {

namespace {

constexpr std::array<std::string_view, 6> kNames{"global", "regional", "local", "mla", "pc", "task"};

Tensor3 random_tensor(std::size_t c, std::size_t h, std::size_t w, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor3 t(c, h, w);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// Random labels over `classes`, about one pixel in eight ignored, never all ignored.
LabelMap random_labels(std::size_t h, std::size_t w, int classes, Rng& rng) {
  std::uniform_int_distribution<int> cat(0, classes - 1);
  std::bernoulli_distribution ignore(0.125);
  LabelMap l(h, w, classes);
  for (std::size_t i = 0; i < l.size(); ++i) {
    l[i] = ignore(rng) ? kIgnoreLabel : static_cast<std::uint8_t>(cat(rng));
  }
  l[0] = static_cast<std::uint8_t>(cat(rng));
  return l;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Central differences of f with respect to every entry of the listed tensors.
std::vector<double> numeric_grad(const std::function<double()>& f, std::span<Tensor3* const> inputs,
                                 double step) {
  std::vector<double> out;
  for (Tensor3* t : inputs) {
    for (double& v : t->values()) {
      const double keep = v;
      v = keep + step;
      const double up = f();
      v = keep - step;
      const double down = f();
      v = keep;
      out.push_back((up - down) / (2.0 * step));
    }
  }
  return out;
}

std::vector<double> flatten(std::initializer_list<const Tensor3*> ts) {
  std::vector<double> out;
  for (const Tensor3* t : ts) out.insert(out.end(), t->values().begin(), t->values().end());
  return out;
}

}  // namespace

std::string_view loss_name(LossSelector loss) { return kNames[static_cast<std::size_t>(loss)]; }

std::optional<LossSelector> parse_loss(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<LossSelector>(i);
  }
  return std::nullopt;
}

std::vector<LossSelector> all_losses() {
  return {LossSelector::global, LossSelector::regional, LossSelector::local,
          LossSelector::mla,    LossSelector::pc,       LossSelector::task};
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("gradient sizes differ");
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  const double denom = std::max(norm(analytic), norm(numeric));
  const double err = norm(diff);
  return denom < 1e-10 ? err : err / denom;
}

GradcheckReport gradcheck(LossSelector loss, std::size_t size, std::size_t channels,
                          std::size_t trials, std::uint64_t seed, double step) {
  GradcheckReport report;
  report.loss = std::string(loss_name(loss));
  report.trials = trials;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(loss) + 101));
  const int classes = static_cast<int>(channels);

  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> analytic, numeric;
    switch (loss) {
      case LossSelector::global:
      case LossSelector::regional:
      case LossSelector::local: {
        Tensor3 f = random_tensor(channels, size, size, rng);
        const Tensor3 n = random_tensor(channels, size, size, rng);
        const LabelMap labels = random_labels(size, size, classes, rng);
        auto eval = [&](Tensor3* grad) {
          if (loss == LossSelector::global) return mla::global_term(f, n, grad);
          if (loss == LossSelector::regional) return mla::regional_term(f, n, labels, grad);
          return mla::local_term(f, n, grad);
        };
        Tensor3 g(channels, size, size);
        eval(&g);
        analytic = g.values();
        Tensor3* inputs[] = {&f};
        numeric = numeric_grad([&] { return eval(nullptr); }, inputs, step);
        break;
      }
      case LossSelector::mla: {
        // Layers of shrinking size, both branches, against fixed neutral targets.
        std::array<Tensor3, 4> fi, fr, fn;
        std::array<LabelMap, 4> labels;
        std::array<mla::LayerInputs, 4> in;
        for (std::size_t l = 0; l < 4; ++l) {
          const std::size_t s = std::max<std::size_t>(1, size - l / 2);
          fi[l] = random_tensor(channels, s, s, rng);
          fr[l] = random_tensor(channels, s, s, rng);
          fn[l] = random_tensor(channels, s, s, rng);
          labels[l] = random_labels(s, s, classes, rng);
          in[l] = {&fi[l], &fr[l], &fn[l], &labels[l]};
        }
        std::vector<mla::LayerGrads> grads;
        mla::mla_loss(in, mla::kDefaultLambda, {}, &grads);
        for (const auto& g : grads) {
          analytic.insert(analytic.end(), g.image.values().begin(), g.image.values().end());
        }
        for (const auto& g : grads) {
          analytic.insert(analytic.end(), g.rearranged.values().begin(), g.rearranged.values().end());
        }
        Tensor3* inputs[] = {&fi[0], &fi[1], &fi[2], &fi[3], &fr[0], &fr[1], &fr[2], &fr[3]};
        numeric = numeric_grad([&] { return mla::mla_loss(in, mla::kDefaultLambda).total; }, inputs, step);
        break;
      }
      case LossSelector::pc: {
        Tensor3 za = random_tensor(channels, size, size, rng, 2.0);
        Tensor3 zb = random_tensor(channels, size, size, rng, 2.0);
        Tensor3 ga(channels, size, size), gb(channels, size, size);
        objective::js_consistency(objective::softmax(za), objective::softmax(zb), &ga, &gb);
        analytic = flatten({&ga, &gb});
        Tensor3* inputs[] = {&za, &zb};
        numeric = numeric_grad(
            [&] { return objective::js_consistency(objective::softmax(za), objective::softmax(zb)); },
            inputs, step);
        break;
      }
      case LossSelector::task: {
        Tensor3 z = random_tensor(channels, size, size, rng, 2.0);
        const LabelMap labels = random_labels(size, size, classes, rng);
        Tensor3 g(channels, size, size);
        objective::task_loss(objective::softmax(z), labels, &g);
        analytic = g.values();
        Tensor3* inputs[] = {&z};
        numeric = numeric_grad([&] { return objective::task_loss(objective::softmax(z), labels); },
                               inputs, step);
        break;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric));
    report.max_grad_norm = std::max(report.max_grad_norm, norm(analytic));
  }
  return report;
}

GradcheckReport network_gradcheck(const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                                  std::size_t image_size, std::size_t entries, std::uint64_t seed,
                                  double step) {
  SegmentationNet net(net_cfg);
  Rng rng(mix_seed(seed, 0x9c));
  const Tensor3 image = [&] {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor3 t(net_cfg.input_channels, image_size, image_size);
    for (double& v : t.values()) v = u(rng);
    return t;
  }();
  const LabelMap labels = random_labels(image_size, image_size, net_cfg.num_classes, rng);

  // Each evaluation replays the same SRM draw.
  const std::uint64_t draw_seed = mix_seed(seed, 0x5a);
  auto loss = [&] {
    Rng draw(draw_seed);
    net.zero_grad();
    return sample_loss_and_grad(net, image, labels, draw, train_cfg, 1.0).loss.total;
  };

  std::vector<Parameter*> params = net.trainable_parameters();
  if (train_cfg.ablation.srm) {
    std::erase_if(params, [](const Parameter* p) { return p->name.rfind("layer0.", 0) == 0; });
  }
  std::vector<std::pair<Parameter*, std::size_t>> picks;
  std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
  for (std::size_t i = 0; i < entries; ++i) {
    Parameter* p = params[which(rng)];
    std::uniform_int_distribution<std::size_t> at(0, p->value.size() - 1);
    picks.emplace_back(p, at(rng));
  }

  loss();
  std::vector<double> analytic;
  for (auto [p, i] : picks) analytic.push_back(p->grad[i]);
  std::vector<double> numeric;
  for (auto [p, i] : picks) {
    const double keep = p->value[i];
    p->value[i] = keep + step;
    const double up = loss();
    p->value[i] = keep - step;
    const double down = loss();
    p->value[i] = keep;
    numeric.push_back((up - down) / (2.0 * step));
  }

  GradcheckReport report;
  report.loss = "network";
  report.trials = 1;
  report.max_rel_error = relative_error(analytic, numeric);
  report.max_grad_norm = norm(analytic);
  return report;
}

}  // namespace srma::net
