#pragma once

// Compact five-stage segmentation network:
//   layer 0  conv3x3-affine-ReLU, frozen by default (the shallow/style layer)
//   [style elimination]
//   layer 1..4  conv3x3-affine-ReLU, trainable ("encoder")
//   decoder  conv3x3-ReLU (optional) and a conv1x1 classifier, bilinearly upsampled
// plus a frozen twin of layers 1..4 snapshotted at initialisation that supplies the
// domain-neutral alignment targets.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "srma/data.hpp"
#include "srma/keyvalue.hpp"
#include "srma/mla.hpp"
#include "srma/objective.hpp"
#include "srma/random.hpp"
#include "srma/srm.hpp"
#include "srma/tensor.hpp"

namespace srma::net {

inline constexpr std::size_t kStages = 5;
inline constexpr std::size_t kDeepLayers = 4;

struct NetworkConfig {
  std::array<std::size_t, kStages> channels{8, 16, 24, 32, 32};
  std::array<std::size_t, kStages> strides{1, 2, 2, 1, 1};
  int num_classes = 4;
  /// Width of the hidden 3x3 decoder layer before the 1x1 classifier; 0 drops it.
  std::size_t decoder_channels = 32;
  std::size_t input_channels = 3;
  std::uint64_t seed = 1;
  bool frozen_layer0 = true;
  /// When false, alignment targets come from the live layers 1..4 (stop-gradient).
  bool neutral_twin = true;
  /// Style elimination after layer 0, applied in training and inference.
  bool style_elimination = true;

  std::size_t total_stride() const;
  void validate() const;

  void write(KeyValue& kv) const;
  static NetworkConfig read(const KeyValue& kv);
};

struct Parameter {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
  bool decoder = false;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Convolution followed by a per-channel affine (scale and shift) and optional ReLU.
/// Without `scale` the affine reduces to a bias.
class ConvBlock {
 public:
  struct Cache {
    RowMatrix columns;  // im2col of the input
    RowMatrix conv;     // convolution output before the affine
    Tensor3 output;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
  };

  ConvBlock() = default;
  ConvBlock(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
            std::size_t stride, bool relu, bool scale, bool decoder, Rng& rng, double init_std);

  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t stride() const noexcept { return stride_; }
  std::size_t output_size(std::size_t in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

  Tensor3 forward(const Tensor3& x, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients; returns the input gradient when requested.
  Tensor3 backward(const Tensor3& grad_output, const Cache& cache, bool need_input_grad);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool relu_ = false;
  bool scale_ = false;
  Parameter weight_, gamma_, beta_;
};

Tensor3 upsample_bilinear(const Tensor3& x, std::size_t out_h, std::size_t out_w);
Tensor3 upsample_bilinear_backward(const Tensor3& grad_output, std::size_t in_h, std::size_t in_w);

/// One pass of layers 1..4 and the head, with everything needed for backprop.
struct BranchTrace {
  Tensor3 input;
  std::array<ConvBlock::Cache, kDeepLayers> layers;
  ConvBlock::Cache decoder;
  ConvBlock::Cache head;
  Tensor3 logits;         // upsampled to the image size
  Tensor3 probabilities;  // softmax of logits
  const Tensor3& feature(std::size_t l) const { return layers[l].output; }
};

struct ForwardResult {
  FeatureMap shallow;
  std::array<FeatureMap, kDeepLayers> features;
  Tensor3 logits;
  Tensor3 probabilities;
};

class SegmentationNet {
 public:
  explicit SegmentationNet(NetworkConfig config);

  const NetworkConfig& config() const noexcept { return cfg_; }

  /// Layer-0 output. Throws ShapeMismatch for a wrong channel count or a too small image.
  FeatureMap shallow(const Tensor3& image, ConvBlock::Cache* cache = nullptr) const;

  /// Input of layer 1: style-eliminated shallow features, or the raw ones when disabled.
  Tensor3 branch_input(const FeatureMap& shallow) const;

  BranchTrace run_branch(const Tensor3& input) const;
  std::array<Tensor3, kDeepLayers> neutral_features(const Tensor3& input) const;

  ForwardResult forward(const Tensor3& image) const;
  LabelMap predict(const Tensor3& image) const;

  /// Backprop through the head and layers 1..4. `grad_features[l]` (may be empty) is added
  /// at the output of layer l+1. Returns the gradient at the branch input when requested.
  Tensor3 backward_branch(const BranchTrace& trace, const Tensor3& grad_logits,
                          const std::array<Tensor3, kDeepLayers>& grad_features,
                          bool need_input_grad);
  void backward_layer0(const ConvBlock::Cache& cache, const Tensor3& grad_output);

  /// Parameters updated by the optimiser (layer 0 only when unfrozen; never the twin).
  std::vector<Parameter*> trainable_parameters();
  void zero_grad();

  /// Every tensor in checkpoint order: layer0, layer1..4, decoder, head, twin1..4.
  std::vector<Parameter*> all_parameters();
  std::vector<const Parameter*> all_parameters() const;

  /// Copies layer 0 and layers 1..4 from a network with the same stage layout and
  /// re-snapshots the twin, so the copied weights become the neutral reference.
  void adopt_backbone(const SegmentationNet& source);

  std::uint64_t layer0_checksum() const;
  std::uint64_t twin_checksum() const;
  std::uint64_t checksum() const;

 private:
  NetworkConfig cfg_;
  ConvBlock layer0_;
  std::array<ConvBlock, kDeepLayers> layers_;
  std::optional<ConvBlock> decoder_;
  ConvBlock head_;
  std::array<ConvBlock, kDeepLayers> twin_;
};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t checksum(std::span<const Parameter* const> params);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Training

struct Ablation {
  bool srm = true;
  bool mla_global = true;
  bool mla_regional = true;
  bool mla_local = true;
  bool pc = true;

  bool any_mla() const noexcept { return mla_global || mla_regional || mla_local; }
};

struct TrainConfig {
  double lr_encoder = 0.005;
  double lr_decoder = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  std::size_t max_steps = 1000;
  std::size_t batch = 8;
  std::size_t crop = 0;  // 0 keeps the full image
  bool flip = true;
  std::uint64_t seed = 1;
  std::array<double, kDeepLayers> lambda_mla = mla::kDefaultLambda;
  double lambda_pc = objective::kDefaultLambdaPc;
  double alpha = srm::kDefaultAlpha;
  Ablation ablation;
  std::size_t log_every = 1;

  void validate() const;
  void write(KeyValue& kv) const;
  static TrainConfig read(const KeyValue& kv);
};

/// base * (1 - step / max_steps)^power, clamped at 0.
double poly_lr(double base, std::size_t step, std::size_t max_steps, double power);

/// SGD with momentum and L2 weight decay: v = m v + (g + wd w); w -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<Parameter* const> params, double lr_encoder, double lr_decoder);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

/// Both branches of one training sample.
struct PairOutput {
  FeatureMap shallow_image;
  std::optional<FeatureMap> shallow_rearranged;
  ConvBlock::Cache layer0_cache;
  BranchTrace image;
  std::optional<BranchTrace> rearranged;
  std::optional<std::array<Tensor3, kDeepLayers>> neutral;
  std::array<LabelMap, kDeepLayers> layer_labels;
};

PairOutput forward_pair(const SegmentationNet& net, const Tensor3& image, const LabelMap& labels,
                        Rng& rng, const TrainConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  double lr_encoder = 0.0;
  double lr_decoder = 0.0;
  objective::LossBreakdown loss;
  mla::AlignmentBreakdown mla;
};

nlohmann::json to_json(const StepRecord& r);

/// Loss of one sample with gradients (times `scale`) accumulated into the network.
StepRecord sample_loss_and_grad(SegmentationNet& net, const Tensor3& image, const LabelMap& labels,
                                Rng& rng, const TrainConfig& cfg, double scale);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<StepRecord> history;
};

/// Flip / crop augmentation applied identically to image and labels.
data::SegSample augment(const data::SegSample& sample, std::size_t crop, bool flip, Rng& rng);

TrainResult train(SegmentationNet& net, std::span<const data::SegSample> dataset,
                  const TrainConfig& cfg,
                  const std::function<void(const StepRecord&)>& sink = {});

// ---------------------------------------------------------------------------
// Persistence

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary: magic "SRMACKPT", u32 version, u64-prefixed config text, u32 tensor count,
/// then per tensor a u32-prefixed name, u64 element count and raw little-endian doubles.
void save_checkpoint(const SegmentationNet& net, const std::filesystem::path& path,
                     const std::string& extra_config = {});
SegmentationNet load_checkpoint(const std::filesystem::path& path, std::string* config_text = nullptr);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace srma::net
