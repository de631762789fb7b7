#include "srma/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "srma/semantic_stats.hpp"

namespace srma::net {

// ---------------------------------------------------------------------------
// Configuration

std::size_t NetworkConfig::total_stride() const {
  std::size_t s = 1;
  for (auto v : strides) s *= v;
  return s;
}

void NetworkConfig::validate() const {
  for (std::size_t i = 0; i < kStages; ++i) {
    if (channels[i] == 0) throw std::invalid_argument("network channels must be >= 1");
    if (strides[i] == 0) throw std::invalid_argument("network strides must be >= 1");
  }
  if (num_classes < 1 || num_classes > 254) throw std::invalid_argument("num_classes must be in [1, 254]");
  if (input_channels == 0) throw std::invalid_argument("input_channels must be >= 1");
}

namespace {

template <std::size_t N>
std::array<std::size_t, N> to_sizes(const std::vector<double>& v, const char* key) {
  if (v.size() != N) {
    throw std::invalid_argument(std::string("config key '") + key + "' needs " +
                                std::to_string(N) + " values");
  }
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (v[i] < 1 || v[i] != std::floor(v[i])) {
      throw std::invalid_argument(std::string("config key '") + key + "' needs positive integers");
    }
    out[i] = static_cast<std::size_t>(v[i]);
  }
  return out;
}

template <std::size_t N>
std::vector<double> to_doubles(const std::array<std::size_t, N>& a) {
  return {a.begin(), a.end()};
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string num_text(double v) { return number_text(v); }

}  // namespace

void NetworkConfig::write(KeyValue& kv) const {
  kv.set("channels", join_numbers(to_doubles(channels)));
  kv.set("strides", join_numbers(to_doubles(strides)));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("decoder_channels", std::to_string(decoder_channels));
  kv.set("input_channels", std::to_string(input_channels));
  kv.set("init_seed", std::to_string(seed));
  kv.set("frozen_layer0", bool_text(frozen_layer0));
  kv.set("neutral_twin", bool_text(neutral_twin));
  kv.set("style_elimination", bool_text(style_elimination));
}

NetworkConfig NetworkConfig::read(const KeyValue& kv) {
  NetworkConfig c;
  c.channels = to_sizes<kStages>(kv.get_doubles("channels", to_doubles(c.channels)), "channels");
  c.strides = to_sizes<kStages>(kv.get_doubles("strides", to_doubles(c.strides)), "strides");
  c.num_classes = static_cast<int>(kv.get_int("num_classes", c.num_classes));
  c.decoder_channels = static_cast<std::size_t>(kv.get_uint("decoder_channels", c.decoder_channels));
  c.input_channels = static_cast<std::size_t>(kv.get_uint("input_channels", c.input_channels));
  c.seed = kv.get_uint("init_seed", kv.get_uint("seed", c.seed));
  c.frozen_layer0 = kv.get_bool("frozen_layer0", c.frozen_layer0);
  c.neutral_twin = kv.get_bool("neutral_twin", c.neutral_twin);
  c.style_elimination = kv.get_bool("style_elimination", c.style_elimination);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be > 0");
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be >= 0");
  };
  positive(lr_encoder, "lr_encoder");
  positive(lr_decoder, "lr_decoder");
  non_negative(momentum, "momentum");
  non_negative(weight_decay, "weight_decay");
  positive(poly_power, "poly_power");
  positive(alpha, "alpha");
  non_negative(lambda_pc, "lambda_pc");
  for (double l : lambda_mla) non_negative(l, "lambda_mla");
  if (max_steps == 0) throw std::invalid_argument("max_steps must be >= 1");
  if (batch == 0) throw std::invalid_argument("batch must be >= 1");
  if (log_every == 0) throw std::invalid_argument("log_every must be >= 1");
}

void TrainConfig::write(KeyValue& kv) const {
  kv.set("lr_encoder", num_text(lr_encoder));
  kv.set("lr_decoder", num_text(lr_decoder));
  kv.set("momentum", num_text(momentum));
  kv.set("weight_decay", num_text(weight_decay));
  kv.set("poly_power", num_text(poly_power));
  kv.set("max_steps", std::to_string(max_steps));
  kv.set("batch", std::to_string(batch));
  kv.set("crop", std::to_string(crop));
  kv.set("flip", bool_text(flip));
  kv.set("seed", std::to_string(seed));
  kv.set("lambda_mla", join_numbers({lambda_mla.begin(), lambda_mla.end()}));
  kv.set("lambda_pc", num_text(lambda_pc));
  kv.set("alpha", num_text(alpha));
  kv.set("use_srm", bool_text(ablation.srm));
  kv.set("use_mla_global", bool_text(ablation.mla_global));
  kv.set("use_mla_regional", bool_text(ablation.mla_regional));
  kv.set("use_mla_local", bool_text(ablation.mla_local));
  kv.set("use_pc", bool_text(ablation.pc));
  kv.set("log_every", std::to_string(log_every));
}

TrainConfig TrainConfig::read(const KeyValue& kv) {
  TrainConfig c;
  c.lr_encoder = kv.get_double("lr_encoder", c.lr_encoder);
  c.lr_decoder = kv.get_double("lr_decoder", c.lr_decoder);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.poly_power = kv.get_double("poly_power", c.poly_power);
  c.max_steps = static_cast<std::size_t>(kv.get_uint("max_steps", c.max_steps));
  c.batch = static_cast<std::size_t>(kv.get_uint("batch", c.batch));
  c.crop = static_cast<std::size_t>(kv.get_uint("crop", c.crop));
  c.flip = kv.get_bool("flip", c.flip);
  c.seed = kv.get_uint("seed", c.seed);
  const auto lm = kv.get_doubles("lambda_mla", {c.lambda_mla.begin(), c.lambda_mla.end()});
  if (lm.size() != kDeepLayers) throw std::invalid_argument("lambda_mla needs 4 values");
  std::copy(lm.begin(), lm.end(), c.lambda_mla.begin());
  c.lambda_pc = kv.get_double("lambda_pc", c.lambda_pc);
  c.alpha = kv.get_double("alpha", c.alpha);
  c.ablation.srm = kv.get_bool("use_srm", c.ablation.srm);
  c.ablation.mla_global = kv.get_bool("use_mla_global", c.ablation.mla_global);
  c.ablation.mla_regional = kv.get_bool("use_mla_regional", c.ablation.mla_regional);
  c.ablation.mla_local = kv.get_bool("use_mla_local", c.ablation.mla_local);
  c.ablation.pc = kv.get_bool("use_pc", c.ablation.pc);
  c.log_every = static_cast<std::size_t>(kv.get_uint("log_every", c.log_every));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Layers

ConvBlock::ConvBlock(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
                     std::size_t stride, bool relu, bool scale, bool decoder, Rng& rng,
                     double init_std)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(kernel / 2), relu_(relu),
      scale_(scale) {
  std::normal_distribution<double> init(0.0, init_std);
  weight_.name = name + ".weight";
  weight_.value.resize(out * in * kernel * kernel);
  for (auto& w : weight_.value) w = init(rng);
  weight_.grad.assign(weight_.value.size(), 0.0);
  weight_.decoder = decoder;
  if (scale_) {
    gamma_.name = name + ".scale";
    gamma_.value.assign(out, 1.0);
    gamma_.grad.assign(out, 0.0);
    gamma_.decoder = decoder;
  }
  beta_.name = name + ".shift";
  beta_.value.assign(out, 0.0);
  beta_.grad.assign(out, 0.0);
  beta_.decoder = decoder;
}

Tensor3 ConvBlock::forward(const Tensor3& x, Cache* cache) const {
  if (x.channels() != in_) {
    throw ShapeMismatch("conv block expects " + std::to_string(in_) + " channels, got " +
                        std::to_string(x.channels()));
  }
  const std::size_t in_h = x.height(), in_w = x.width();
  const std::size_t oh = output_size(in_h), ow = output_size(in_w);
  const std::size_t positions = oh * ow;
  const std::size_t rows = in_ * kernel_ * kernel_;

  Cache local;
  Cache& c = cache ? *cache : local;
  c.in_h = in_h;
  c.in_w = in_w;
  c.columns.setZero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(positions));
  for (std::size_t ci = 0; ci < in_; ++ci) {
    for (std::size_t ky = 0; ky < kernel_; ++ky) {
      for (std::size_t kx = 0; kx < kernel_; ++kx) {
        const std::size_t r = (ci * kernel_ + ky) * kernel_ + kx;
        double* row = c.columns.row(static_cast<Eigen::Index>(r)).data();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
            row[oy * ow + ox] = x.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
    }
  }

  Eigen::Map<const RowMatrix> w(weight_.value.data(), static_cast<Eigen::Index>(out_),
                                static_cast<Eigen::Index>(rows));
  c.conv.noalias() = w * c.columns;

  Tensor3 y(out_, oh, ow);
  for (std::size_t o = 0; o < out_; ++o) {
    const double g = scale_ ? gamma_.value[o] : 1.0;
    const double b = beta_.value[o];
    const double* src = c.conv.row(static_cast<Eigen::Index>(o)).data();
    auto dst = y.plane(o);
    for (std::size_t p = 0; p < positions; ++p) {
      const double v = g * src[p] + b;
      dst[p] = relu_ && v < 0.0 ? 0.0 : v;
    }
  }
  if (cache) c.output = y;
  return y;
}

Tensor3 ConvBlock::backward(const Tensor3& grad_output, const Cache& cache, bool need_input_grad) {
  const std::size_t positions = grad_output.plane_size();
  const std::size_t rows = in_ * kernel_ * kernel_;
  RowMatrix d_conv(static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(positions));
  for (std::size_t o = 0; o < out_; ++o) {
    auto go = grad_output.plane(o);
    auto out = cache.output.plane(o);
    const double* conv = cache.conv.row(static_cast<Eigen::Index>(o)).data();
    double* dc = d_conv.row(static_cast<Eigen::Index>(o)).data();
    const double g = scale_ ? gamma_.value[o] : 1.0;
    double d_gamma = 0.0, d_beta = 0.0;
    for (std::size_t p = 0; p < positions; ++p) {
      const double d_pre = (relu_ && out[p] <= 0.0) ? 0.0 : go[p];
      d_beta += d_pre;
      d_gamma += d_pre * conv[p];
      dc[p] = d_pre * g;
    }
    beta_.grad[o] += d_beta;
    if (scale_) gamma_.grad[o] += d_gamma;
  }
  Eigen::Map<RowMatrix> dw(weight_.grad.data(), static_cast<Eigen::Index>(out_),
                           static_cast<Eigen::Index>(rows));
  dw.noalias() += d_conv * cache.columns.transpose();
  if (!need_input_grad) return {};

  Eigen::Map<const RowMatrix> w(weight_.value.data(), static_cast<Eigen::Index>(out_),
                                static_cast<Eigen::Index>(rows));
  RowMatrix d_cols = w.transpose() * d_conv;
  Tensor3 dx(in_, cache.in_h, cache.in_w);
  const std::size_t oh = grad_output.height(), ow = grad_output.width();
  for (std::size_t ci = 0; ci < in_; ++ci) {
    for (std::size_t ky = 0; ky < kernel_; ++ky) {
      for (std::size_t kx = 0; kx < kernel_; ++kx) {
        const std::size_t r = (ci * kernel_ + ky) * kernel_ + kx;
        const double* row = d_cols.row(static_cast<Eigen::Index>(r)).data();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(cache.in_h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(cache.in_w)) continue;
            dx.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += row[oy * ow + ox];
          }
        }
      }
    }
  }
  return dx;
}

std::vector<Parameter*> ConvBlock::parameters() {
  std::vector<Parameter*> out{&weight_};
  if (scale_) out.push_back(&gamma_);
  out.push_back(&beta_);
  return out;
}

std::vector<const Parameter*> ConvBlock::parameters() const {
  std::vector<const Parameter*> out{&weight_};
  if (scale_) out.push_back(&gamma_);
  out.push_back(&beta_);
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

// Half-pixel-centre source coordinates (align_corners = false).
std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor3 upsample_bilinear(const Tensor3& x, std::size_t out_h, std::size_t out_w) {
  const auto ty = bilinear_taps(x.height(), out_h);
  const auto tx = bilinear_taps(x.width(), out_w);
  Tensor3 y(x.channels(), out_h, out_w);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const double top = (1.0 - b.frac) * x.at(c, a.i0, b.i0) + b.frac * x.at(c, a.i0, b.i1);
        const double bot = (1.0 - b.frac) * x.at(c, a.i1, b.i0) + b.frac * x.at(c, a.i1, b.i1);
        y.at(c, oy, ox) = (1.0 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return y;
}

Tensor3 upsample_bilinear_backward(const Tensor3& grad_output, std::size_t in_h, std::size_t in_w) {
  const auto ty = bilinear_taps(in_h, grad_output.height());
  const auto tx = bilinear_taps(in_w, grad_output.width());
  Tensor3 g(grad_output.channels(), in_h, in_w);
  for (std::size_t c = 0; c < g.channels(); ++c) {
    for (std::size_t oy = 0; oy < grad_output.height(); ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < grad_output.width(); ++ox) {
        const Tap& b = tx[ox];
        const double v = grad_output.at(c, oy, ox);
        g.at(c, a.i0, b.i0) += (1.0 - a.frac) * (1.0 - b.frac) * v;
        g.at(c, a.i0, b.i1) += (1.0 - a.frac) * b.frac * v;
        g.at(c, a.i1, b.i0) += a.frac * (1.0 - b.frac) * v;
        g.at(c, a.i1, b.i1) += a.frac * b.frac * v;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Network

SegmentationNet::SegmentationNet(NetworkConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 0x1a7e));
  const auto& ch = cfg_.channels;
  const auto& st = cfg_.strides;
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  layer0_ = ConvBlock("layer0", cfg_.input_channels, ch[0], 3, st[0], true, true, false, rng,
                      he(cfg_.input_channels * 9));
  for (std::size_t l = 0; l < kDeepLayers; ++l) {
    layers_[l] = ConvBlock("layer" + std::to_string(l + 1), ch[l], ch[l + 1], 3, st[l + 1], true,
                           true, false, rng, he(ch[l] * 9));
  }
  std::size_t head_in = ch[4];
  if (cfg_.decoder_channels > 0) {
    decoder_.emplace("decoder", ch[4], cfg_.decoder_channels, 3, 1, true, false, true, rng, he(ch[4] * 9));
    head_in = cfg_.decoder_channels;
  }
  head_ = ConvBlock("head", head_in, static_cast<std::size_t>(cfg_.num_classes), 1, 1, false, false,
                    true, rng, std::sqrt(1.0 / static_cast<double>(head_in)));
  twin_ = layers_;
  for (auto& block : twin_) {
    for (auto* p : block.parameters()) p->name = "twin." + p->name;
  }
}

FeatureMap SegmentationNet::shallow(const Tensor3& image, ConvBlock::Cache* cache) const {
  if (image.channels() != cfg_.input_channels) {
    throw ShapeMismatch("image has " + std::to_string(image.channels()) + " channels, network expects " +
                        std::to_string(cfg_.input_channels));
  }
  if (image.height() == 0 || image.width() == 0) throw ShapeMismatch("empty image");
  return {layer0_.forward(image, cache), 0};
}

Tensor3 SegmentationNet::branch_input(const FeatureMap& shallow) const {
  return cfg_.style_elimination ? mla::standardize_channels(shallow.values) : shallow.values;
}

BranchTrace SegmentationNet::run_branch(const Tensor3& input) const {
  BranchTrace t;
  t.input = input;
  const Tensor3* x = &t.input;
  for (std::size_t l = 0; l < kDeepLayers; ++l) {
    layers_[l].forward(*x, &t.layers[l]);
    x = &t.layers[l].output;
  }
  if (decoder_) {
    decoder_->forward(*x, &t.decoder);
    x = &t.decoder.output;
  }
  head_.forward(*x, &t.head);
  // Undo the layer-0 stride so the logits match the label grid.
  const std::size_t out_h = input.height() * cfg_.strides[0];
  const std::size_t out_w = input.width() * cfg_.strides[0];
  t.logits = upsample_bilinear(t.head.output, out_h, out_w);
  t.probabilities = objective::softmax(t.logits);
  return t;
}

std::array<Tensor3, kDeepLayers> SegmentationNet::neutral_features(const Tensor3& input) const {
  const auto& blocks = cfg_.neutral_twin ? twin_ : layers_;
  std::array<Tensor3, kDeepLayers> out;
  const Tensor3* x = &input;
  for (std::size_t l = 0; l < kDeepLayers; ++l) {
    out[l] = blocks[l].forward(*x);
    x = &out[l];
  }
  return out;
}

ForwardResult SegmentationNet::forward(const Tensor3& image) const {
  if (image.height() % cfg_.strides[0] != 0 || image.width() % cfg_.strides[0] != 0) {
    throw ShapeMismatch("image size must be a multiple of the layer-0 stride");
  }
  ForwardResult r;
  r.shallow = shallow(image);
  BranchTrace t = run_branch(branch_input(r.shallow));
  for (std::size_t l = 0; l < kDeepLayers; ++l) {
    r.features[l] = {std::move(t.layers[l].output), static_cast<int>(l + 1)};
  }
  r.logits = std::move(t.logits);
  r.probabilities = std::move(t.probabilities);
  return r;
}

LabelMap SegmentationNet::predict(const Tensor3& image) const {
  const ForwardResult r = forward(image);
  LabelMap out(r.logits.height(), r.logits.width(), cfg_.num_classes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.logits.channels(); ++c) {
      if (r.logits.plane(c)[i] > r.logits.plane(best)[i]) best = c;
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Tensor3 SegmentationNet::backward_branch(const BranchTrace& trace, const Tensor3& grad_logits,
                                         const std::array<Tensor3, kDeepLayers>& grad_features,
                                         bool need_input_grad) {
  Tensor3 g = upsample_bilinear_backward(grad_logits, trace.head.output.height(),
                                         trace.head.output.width());
  g = head_.backward(g, trace.head, true);
  if (decoder_) g = decoder_->backward(g, trace.decoder, true);
  for (std::size_t l = kDeepLayers; l-- > 0;) {
    if (!grad_features[l].empty()) g += grad_features[l];
    g = layers_[l].backward(g, trace.layers[l], l > 0 || need_input_grad);
  }
  return g;
}

void SegmentationNet::backward_layer0(const ConvBlock::Cache& cache, const Tensor3& grad_output) {
  layer0_.backward(grad_output, cache, false);
}

std::vector<Parameter*> SegmentationNet::trainable_parameters() {
  std::vector<Parameter*> out;
  if (!cfg_.frozen_layer0) {
    for (auto* p : layer0_.parameters()) out.push_back(p);
  }
  for (auto& b : layers_) {
    for (auto* p : b.parameters()) out.push_back(p);
  }
  if (decoder_) {
    for (auto* p : decoder_->parameters()) out.push_back(p);
  }
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

void SegmentationNet::zero_grad() {
  for (auto* p : all_parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::vector<Parameter*> SegmentationNet::all_parameters() {
  std::vector<Parameter*> out;
  auto add = [&](ConvBlock& b) {
    for (auto* p : b.parameters()) out.push_back(p);
  };
  add(layer0_);
  for (auto& b : layers_) add(b);
  if (decoder_) add(*decoder_);
  add(head_);
  for (auto& b : twin_) add(b);
  return out;
}

std::vector<const Parameter*> SegmentationNet::all_parameters() const {
  std::vector<const Parameter*> out;
  auto add = [&](const ConvBlock& b) {
    for (auto* p : b.parameters()) out.push_back(p);
  };
  add(layer0_);
  for (const auto& b : layers_) add(b);
  if (decoder_) add(*decoder_);
  add(head_);
  for (const auto& b : twin_) add(b);
  return out;
}

void SegmentationNet::adopt_backbone(const SegmentationNet& source) {
  const auto& sc = source.config();
  if (sc.channels != cfg_.channels || sc.strides != cfg_.strides || sc.input_channels != cfg_.input_channels) {
    throw ShapeMismatch("backbone layouts differ");
  }
  layer0_ = source.layer0_;
  layers_ = source.layers_;
  twin_ = layers_;
  for (auto& block : twin_) {
    for (auto* p : block.parameters()) p->name = "twin." + p->name;
  }
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) {
    h = fnv1a({reinterpret_cast<const std::uint8_t*>(p->name.data()), p->name.size()}, h);
    h = fnv1a({reinterpret_cast<const std::uint8_t*>(p->value.data()), p->value.size() * sizeof(double)}, h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t SegmentationNet::layer0_checksum() const {
  const auto p = layer0_.parameters();
  return net::checksum(p);
}

std::uint64_t SegmentationNet::twin_checksum() const {
  std::vector<const Parameter*> p;
  for (const auto& b : twin_) {
    for (auto* q : b.parameters()) p.push_back(q);
  }
  return net::checksum(p);
}

std::uint64_t SegmentationNet::checksum() const {
  const auto p = all_parameters();
  return net::checksum(p);
}

// ---------------------------------------------------------------------------
// Training

double poly_lr(double base, std::size_t step, std::size_t max_steps, double power) {
  if (step >= max_steps) return 0.0;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(max_steps);
  return base * std::pow(frac, power);
}

void SgdMomentum::step(std::span<Parameter* const> params, double lr_encoder, double lr_decoder) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto* p : params) velocity_.emplace_back(p->value.size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto& v = velocity_[i];
    const double lr = p.decoder ? lr_decoder : lr_encoder;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = momentum_ * v[j] + p.grad[j] + weight_decay_ * p.value[j];
      p.value[j] -= lr * v[j];
    }
  }
}

PairOutput forward_pair(const SegmentationNet& net, const Tensor3& image, const LabelMap& labels,
                        Rng& rng, const TrainConfig& cfg) {
  if (labels.height() != image.height() || labels.width() != image.width()) {
    throw ShapeMismatch("labels do not match image");
  }
  PairOutput out;
  out.shallow_image = net.shallow(image, &out.layer0_cache);
  const Tensor3 x_image = net.branch_input(out.shallow_image);
  out.image = net.run_branch(x_image);

  if (cfg.ablation.srm) {
    const LabelMap shallow_labels = stats::resize_labels(labels, out.shallow_image.height(),
                                                         out.shallow_image.width());
    out.shallow_rearranged = srm::rearrange(out.shallow_image, shallow_labels, rng, cfg.alpha);
    out.rearranged = net.run_branch(net.branch_input(*out.shallow_rearranged));
  }
  if (cfg.ablation.any_mla()) {
    out.neutral = net.neutral_features(x_image);
    for (std::size_t l = 0; l < kDeepLayers; ++l) {
      const Tensor3& f = out.image.feature(l);
      out.layer_labels[l] = stats::resize_labels(labels, f.height(), f.width());
    }
  }
  return out;
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& a : r.mla.layers) {
    layers.push_back({{"global", a.global}, {"regional", a.regional}, {"local", a.local}});
  }
  nlohmann::json j = {{"step", r.step},
                      {"lr_encoder", r.lr_encoder},
                      {"lr_decoder", r.lr_decoder},
                      {"task_I", r.loss.task_image},
                      {"mla_total", r.loss.mla_total},
                      {"pc", r.loss.pc},
                      {"lambda_pc", r.loss.lambda_pc},
                      {"total", r.loss.total},
                      {"mla", {{"layers", layers}, {"lambda", r.mla.lambda}, {"total", r.mla.total}}}};
  j["task_SR"] = r.loss.task_rearranged ? nlohmann::json(*r.loss.task_rearranged) : nlohmann::json(nullptr);
  return j;
}

StepRecord sample_loss_and_grad(SegmentationNet& net, const Tensor3& image, const LabelMap& labels,
                                Rng& rng, const TrainConfig& cfg, double scale) {
  PairOutput pair = forward_pair(net, image, labels, rng, cfg);
  const bool has_sr = pair.rearranged.has_value();
  const double task_weight = has_sr ? 0.5 : 1.0;

  Tensor3 g_logits_image;
  Tensor3 g_logits_sr;
  const double task_image =
      objective::task_loss(pair.image.probabilities, labels, &g_logits_image, task_weight * scale);
  std::optional<double> task_sr;
  if (has_sr) {
    task_sr = objective::task_loss(pair.rearranged->probabilities, labels, &g_logits_sr,
                                   task_weight * scale);
  }

  std::array<Tensor3, kDeepLayers> g_feat_image;
  std::array<Tensor3, kDeepLayers> g_feat_sr;
  mla::AlignmentBreakdown mla_out;
  mla_out.lambda.assign(cfg.lambda_mla.begin(), cfg.lambda_mla.end());
  mla_out.layers.resize(kDeepLayers);
  if (pair.neutral) {
    std::array<mla::LayerInputs, kDeepLayers> inputs;
    for (std::size_t l = 0; l < kDeepLayers; ++l) {
      inputs[l].image = &pair.image.feature(l);
      inputs[l].rearranged = has_sr ? &pair.rearranged->feature(l) : nullptr;
      inputs[l].neutral = &(*pair.neutral)[l];
      inputs[l].labels = &pair.layer_labels[l];
    }
    const mla::LevelMask mask{cfg.ablation.mla_global, cfg.ablation.mla_regional, cfg.ablation.mla_local};
    std::vector<mla::LayerGrads> grads;
    mla_out = mla::mla_loss(inputs, cfg.lambda_mla, mask, &grads);
    for (std::size_t l = 0; l < kDeepLayers; ++l) {
      if (!grads[l].image.empty()) {
        for (double& v : grads[l].image.values()) v *= scale;
        g_feat_image[l] = std::move(grads[l].image);
      }
      if (!grads[l].rearranged.empty()) {
        for (double& v : grads[l].rearranged.values()) v *= scale;
        g_feat_sr[l] = std::move(grads[l].rearranged);
      }
    }
  }

  double pc = 0.0;
  if (has_sr && cfg.ablation.pc) {
    pc = objective::js_consistency(pair.image.probabilities, pair.rearranged->probabilities,
                                   &g_logits_image, &g_logits_sr, cfg.lambda_pc * scale);
  }
  const double lambda_pc = has_sr && cfg.ablation.pc ? cfg.lambda_pc : 0.0;

  const bool train_layer0 = !net.config().frozen_layer0;
  const Tensor3 g_input = net.backward_branch(pair.image, g_logits_image, g_feat_image, train_layer0);
  if (has_sr) net.backward_branch(*pair.rearranged, g_logits_sr, g_feat_sr, false);
  if (train_layer0) {
    // The rearranged branch is detached from layer 0; only the original sample trains it.
    const Tensor3 g_shallow = net.config().style_elimination
                                  ? mla::standardize_channels_backward(pair.shallow_image.values,
                                                                       pair.image.input, g_input)
                                  : g_input;
    net.backward_layer0(pair.layer0_cache, g_shallow);
  }

  StepRecord rec;
  rec.loss = objective::total_loss(task_image, task_sr, mla_out, pc, lambda_pc);
  rec.mla = std::move(mla_out);
  return rec;
}

data::SegSample augment(const data::SegSample& sample, std::size_t crop, bool flip, Rng& rng) {
  const std::size_t h = sample.image.height(), w = sample.image.width();
  const std::size_t ch = crop == 0 ? h : std::min(crop, h);
  const std::size_t cw = crop == 0 ? w : std::min(crop, w);
  std::uniform_int_distribution<std::size_t> oy_d(0, h - ch);
  std::uniform_int_distribution<std::size_t> ox_d(0, w - cw);
  std::bernoulli_distribution coin(0.5);
  const std::size_t oy = oy_d(rng);
  const std::size_t ox = ox_d(rng);
  const bool mirror = flip && coin(rng);

  data::SegSample out;
  out.id = sample.id;
  out.image = Tensor3(sample.image.channels(), ch, cw);
  out.labels = LabelMap(ch, cw, sample.labels.num_categories());
  for (std::size_t y = 0; y < ch; ++y) {
    for (std::size_t x = 0; x < cw; ++x) {
      const std::size_t sx = ox + (mirror ? cw - 1 - x : x);
      for (std::size_t c = 0; c < sample.image.channels(); ++c) {
        out.image.at(c, y, x) = sample.image.at(c, oy + y, sx);
      }
      out.labels.at(y, x) = sample.labels.at(oy + y, sx);
    }
  }
  return out;
}

namespace {

void accumulate(StepRecord& acc, const StepRecord& r, double w, bool first) {
  if (first) {
    acc.loss = {};
    acc.loss.lambda_pc = r.loss.lambda_pc;
    if (r.loss.task_rearranged) acc.loss.task_rearranged = 0.0;
    acc.mla.lambda = r.mla.lambda;
    acc.mla.layers.assign(r.mla.layers.size(), {});
    acc.mla.total = 0.0;
  }
  acc.loss.task_image += w * r.loss.task_image;
  if (r.loss.task_rearranged) *acc.loss.task_rearranged += w * *r.loss.task_rearranged;
  acc.loss.mla_total += w * r.loss.mla_total;
  acc.loss.pc += w * r.loss.pc;
  acc.loss.total += w * r.loss.total;
  acc.mla.total += w * r.mla.total;
  for (std::size_t l = 0; l < r.mla.layers.size(); ++l) {
    acc.mla.layers[l].global += w * r.mla.layers[l].global;
    acc.mla.layers[l].regional += w * r.mla.layers[l].regional;
    acc.mla.layers[l].local += w * r.mla.layers[l].local;
  }
}

}  // namespace

TrainResult train(SegmentationNet& net, std::span<const data::SegSample> dataset,
                  const TrainConfig& cfg, const std::function<void(const StepRecord&)>& sink) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  Rng rng(mix_seed(cfg.seed, 0x7a1));
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  const auto params = net.trainable_parameters();
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

  TrainResult result;
  result.history.reserve(cfg.max_steps);
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    net.zero_grad();
    StepRecord rec;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const data::SegSample s = augment(dataset[pick(rng)], cfg.crop, cfg.flip, rng);
      const StepRecord r = sample_loss_and_grad(net, s.image, s.labels, rng, cfg, inv_batch);
      accumulate(rec, r, inv_batch, b == 0);
    }
    if (!std::isfinite(rec.loss.total)) {
      throw DivergenceError("non-finite loss at step " + std::to_string(step));
    }
    rec.step = step;
    rec.lr_encoder = poly_lr(cfg.lr_encoder, step, cfg.max_steps, cfg.poly_power);
    rec.lr_decoder = poly_lr(cfg.lr_decoder, step, cfg.max_steps, cfg.poly_power);
    opt.step(params, rec.lr_encoder, rec.lr_decoder);
    if (sink && step % cfg.log_every == 0) sink(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'S', 'R', 'M', 'A', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const SegmentationNet& net, const std::filesystem::path& path,
                     const std::string& extra_config) {
  KeyValue kv;
  net.config().write(kv);
  std::string text = kv.to_text();
  if (!extra_config.empty()) text += "# run\n" + extra_config;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = net.all_parameters();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint64_t>(os, p->value.size());
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

SegmentationNet load_checkpoint(const std::filesystem::path& path, std::string* config_text) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto text_len = get<std::uint64_t>(is);
  std::string text(text_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(text_len))) throw std::runtime_error("truncated checkpoint");
  if (config_text) *config_text = text;

  const KeyValue kv = KeyValue::parse(text);
  SegmentationNet net(NetworkConfig::read(kv));
  auto params = net.all_parameters();
  const auto count = get<std::uint32_t>(is);
  if (count != params.size()) throw std::runtime_error("checkpoint tensor count does not match network");
  for (auto* p : params) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("truncated checkpoint");
    if (name != p->name) throw std::runtime_error("checkpoint tensor '" + name + "' where '" + p->name + "' expected");
    const auto n = get<std::uint64_t>(is);
    if (n != p->value.size()) throw std::runtime_error("checkpoint tensor '" + name + "' has wrong size");
    if (!is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw std::runtime_error("truncated checkpoint");
    }
  }
  return net;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}

}  // namespace srma::net
