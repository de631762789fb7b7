#pragma once

// Analytic gradients against central finite differences.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "srma/toynet.hpp"

namespace srma::net {

enum class LossSelector { global, regional, local, mla, pc, task };

std::string_view loss_name(LossSelector loss);
std::optional<LossSelector> parse_loss(std::string_view name);
std::vector<LossSelector> all_losses();

struct GradcheckReport {
  std::string loss;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  double max_grad_norm = 0.0;  // largest analytic gradient norm seen
};

/// Relative error ||a - n|| / max(||a||, ||n||); the absolute error when both norms are ~0.
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

/// Random channels x size x size probes (features, labels with some ignore pixels, logits);
/// one trial checks every input entry of the selected loss.
GradcheckReport gradcheck(LossSelector loss, std::size_t size = 3, std::size_t channels = 4,
                          std::size_t trials = 50, std::uint64_t seed = 1, double step = 1e-4);

/// Whole-network check of the training objective with respect to `entries` randomly
/// chosen parameter values. The rearranged branch is detached from layer 0, so layer-0
/// parameters are only probed when SRM is off.
GradcheckReport network_gradcheck(const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                                  std::size_t image_size = 16, std::size_t entries = 60,
                                  std::uint64_t seed = 1, double step = 1e-5);

}  // namespace srma::net
