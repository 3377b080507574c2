#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cloudseg/autoconfig.hpp"
#include "cloudseg/layers.hpp"
#include "cloudseg/rng.hpp"

namespace cloudseg {

template <class T>
struct Parameter {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<T> values;
};

// One buffer per parameter tensor, in parameter order.
template <class T>
using LayerGradients = std::vector<std::vector<T>>;

// N x C x H x W, row-major.
template <class T>
struct Batch {
  int n = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Batch() = default;
  Batch(int n_, int c, int h, int w) : n(n_), channels(c), height(h), width(w), data(std::size_t(n_) * c * h * w) {}

  std::size_t sample_size() const { return static_cast<std::size_t>(channels) * height * width; }
  T* sample(int i) { return data.data() + i * sample_size(); }
  const T* sample(int i) const { return data.data() + i * sample_size(); }

  nn::Feature<T> feature(int i) const {
    nn::Feature<T> f(channels, height, width);
    std::copy_n(sample(i), sample_size(), f.data.begin());
    return f;
  }
  void set_feature(int i, const nn::Feature<T>& f) { std::copy(f.data.begin(), f.data.end(), sample(i)); }
};

namespace detail {
inline std::uint64_t next_model_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

// Identity of a parameter set; every copy gets a fresh id so caches never cross models.
struct ModelId {
  std::uint64_t value = next_model_id();
  ModelId() = default;
  ModelId(const ModelId&) : value(next_model_id()) {}
  ModelId& operator=(const ModelId&) {
    value = next_model_id();
    return *this;
  }
};
}  // namespace detail

template <class T>
struct BlockCache {
  nn::Feature<T> input;
  nn::NormCache<T> norm;
  nn::Feature<T> output;
};

template <class T>
struct SampleCache {
  std::vector<BlockCache<T>> encoder;   // 2 per stage
  std::vector<BlockCache<T>> decoder;   // 2 per decoder stage, indexed by stage
  std::vector<nn::Feature<T>> up_input; // per decoder stage
  nn::Feature<T> head_input;
};

// Everything backward needs, bound to the model state that produced it.
template <class T>
struct ForwardCache {
  std::uint64_t model_id = 0;
  std::uint64_t version = 0;
  std::vector<SampleCache<T>> samples;
};

// Encoder: per stage two [conv3x3 -> instance norm -> leaky ReLU] blocks, the first
// one stride 2 for stages >= 1. Decoder: 2x2 transposed conv, skip concat, two blocks.
// Head: 1x1 conv to two logits.
template <class T>
class UNet {
 public:
  explicit UNet(const PipelineConfig& config) : config_(config) {
    for (const auto& spec : parameter_layout(config)) {
      index_[spec.name] = static_cast<int>(params_.size());
      params_.push_back({spec.name, spec.shape, std::vector<T>(spec.count(), T(0))});
      specs_.push_back(spec);
    }
    build_blocks();
  }

  // He-normal fan-in weights, zero biases, unit norm scales; fully determined by seed.
  static UNet init_params(const PipelineConfig& config, std::uint64_t seed) {
    UNet m(config);
    Rng rng(seed);
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
      const auto& spec = m.specs_[i];
      auto& v = m.params_[i].values;
      switch (spec.init) {
        case ParamSpec::Init::HeNormal: {
          const double sd = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
          for (T& x : v) x = static_cast<T>(sd * rng.normal());
          break;
        }
        case ParamSpec::Init::One: std::fill(v.begin(), v.end(), T(1)); break;
        case ParamSpec::Init::Zero: std::fill(v.begin(), v.end(), T(0)); break;
      }
    }
    return m;
  }

  template <class U>
  UNet<U> cast() const {
    UNet<U> out(config_);
    auto& dst = out.mutable_parameters();
    for (std::size_t i = 0; i < params_.size(); ++i)
      std::transform(params_[i].values.begin(), params_[i].values.end(), dst[i].values.begin(),
                     [](T v) { return static_cast<U>(v); });
    return out;
  }

  const PipelineConfig& config() const { return config_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  const std::vector<ParamSpec>& specs() const { return specs_; }

  // Any mutable access invalidates outstanding forward caches.
  std::vector<Parameter<T>>& mutable_parameters() {
    ++version_;
    return params_;
  }

  int parameter_index(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::Argument, "no parameter named " + name);
    return it->second;
  }

  std::uint64_t parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& p : params_) n += p.values.size();
    return n;
  }

  LayerGradients<T> zero_gradients() const {
    LayerGradients<T> g;
    for (const auto& p : params_) g.emplace_back(p.values.size(), T(0));
    return g;
  }

  // Logits N x 2 x H x W. Pass a cache to enable backward.
  Batch<T> forward(const Batch<T>& input, ForwardCache<T>* cache = nullptr) const {
    const int div = 1 << config_.n_downsamplings;
    require(input.channels == config_.in_channels, ErrorKind::Argument,
            "input has " + std::to_string(input.channels) + " bands, model expects " +
                std::to_string(config_.in_channels));
    require(input.height > 0 && input.width > 0 && input.height % div == 0 && input.width % div == 0,
            ErrorKind::Argument, "input dims must be divisible by 2^d = " + std::to_string(div));
    Batch<T> logits(input.n, config_.n_classes, input.height, input.width);
    if (cache) {
      cache->model_id = id_.value;
      cache->version = version_;
      cache->samples.assign(input.n, {});
    }
    for (int i = 0; i < input.n; ++i)
      logits.set_feature(i, forward_sample(input.feature(i), cache ? &cache->samples[i] : nullptr));
    return logits;
  }

  LayerGradients<T> backward(const ForwardCache<T>& cache, const Batch<T>& grad_logits) const {
    require(cache.model_id == id_.value && cache.version == version_, ErrorKind::Contract,
            "stale forward cache: parameters changed since the forward pass");
    require(static_cast<int>(cache.samples.size()) == grad_logits.n, ErrorKind::Contract,
            "gradient batch does not match cached forward batch");
    auto grads = zero_gradients();
    for (int i = 0; i < grad_logits.n; ++i) backward_sample(cache.samples[i], grad_logits.feature(i), grads);
    return grads;
  }

 private:
  struct Block {
    nn::ConvShape shape;
    int weight, bias, scale, shift;
  };
  struct UpConv {
    int in_channels, out_channels, weight, bias;
  };

  std::span<const T> p(int idx) const { return params_[idx].values; }

  void build_blocks() {
    const int d = config_.n_downsamplings;
    auto block = [&](const std::string& conv, const std::string& norm, int cin, int cout, int stride) {
      return Block{nn::ConvShape{cin, cout, 3, stride, 1}, index_.at(conv + ".weight"), index_.at(conv + ".bias"),
                   index_.at(norm + ".scale"), index_.at(norm + ".shift")};
    };
    int prev = config_.in_channels;
    for (int s = 0; s <= d; ++s) {
      const std::string pre = "enc" + std::to_string(s);
      const int ch = config_.channels[s];
      encoder_.push_back(block(pre + ".conv0", pre + ".norm0", prev, ch, s == 0 ? 1 : 2));
      encoder_.push_back(block(pre + ".conv1", pre + ".norm1", ch, ch, 1));
      prev = ch;
    }
    decoder_.resize(2 * d);
    up_.resize(d);
    for (int s = d - 1; s >= 0; --s) {
      const std::string pre = "dec" + std::to_string(s);
      const int ch = config_.channels[s];
      up_[s] = {config_.channels[s + 1], ch, index_.at(pre + ".up.weight"), index_.at(pre + ".up.bias")};
      decoder_[2 * s] = block(pre + ".conv0", pre + ".norm0", 2 * ch, ch, 1);
      decoder_[2 * s + 1] = block(pre + ".conv1", pre + ".norm1", ch, ch, 1);
    }
    head_ = {nn::ConvShape{config_.channels[0], config_.n_classes, 1, 1, 0}, index_.at("head.weight"),
             index_.at("head.bias"), -1, -1};
  }

  nn::Feature<T> block_forward(const Block& b, const nn::Feature<T>& x, BlockCache<T>* c) const {
    auto z = nn::conv_forward(x, b.shape, p(b.weight), p(b.bias));
    auto y = nn::instance_norm_forward(z, p(b.scale), p(b.shift), c ? &c->norm : nullptr);
    nn::leaky_relu_inplace(y);
    if (c) {
      c->input = x;
      c->output = y;
    }
    return y;
  }

  nn::Feature<T> block_backward(const Block& b, const BlockCache<T>& c, nn::Feature<T> g, LayerGradients<T>& grads,
                                bool want_input_grad) const {
    nn::leaky_relu_backward_inplace(c.output, g);
    auto dz = nn::instance_norm_backward(c.norm, p(b.scale), g, std::span<T>(grads[b.scale]),
                                         std::span<T>(grads[b.shift]));
    return nn::conv_backward(c.input, b.shape, p(b.weight), dz, std::span<T>(grads[b.weight]),
                             std::span<T>(grads[b.bias]), want_input_grad);
  }

  nn::Feature<T> forward_sample(nn::Feature<T> x, SampleCache<T>* c) const {
    const int d = config_.n_downsamplings;
    if (c) {
      c->encoder.resize(encoder_.size());
      c->decoder.resize(decoder_.size());
      c->up_input.resize(d);
    }
    std::vector<nn::Feature<T>> skips;
    for (int s = 0; s <= d; ++s) {
      x = block_forward(encoder_[2 * s], x, c ? &c->encoder[2 * s] : nullptr);
      x = block_forward(encoder_[2 * s + 1], x, c ? &c->encoder[2 * s + 1] : nullptr);
      if (s < d) skips.push_back(x);
    }
    for (int s = d - 1; s >= 0; --s) {
      if (c) c->up_input[s] = x;
      auto up = nn::upconv_forward(x, up_[s].out_channels, p(up_[s].weight), p(up_[s].bias));
      x = nn::concat_channels(up, skips[s]);
      x = block_forward(decoder_[2 * s], x, c ? &c->decoder[2 * s] : nullptr);
      x = block_forward(decoder_[2 * s + 1], x, c ? &c->decoder[2 * s + 1] : nullptr);
    }
    if (c) c->head_input = x;
    return nn::conv_forward(x, head_.shape, p(head_.weight), p(head_.bias));
  }

  void backward_sample(const SampleCache<T>& c, const nn::Feature<T>& dlogits, LayerGradients<T>& grads) const {
    const int d = config_.n_downsamplings;
    auto g = nn::conv_backward(c.head_input, head_.shape, p(head_.weight), dlogits, std::span<T>(grads[head_.weight]),
                               std::span<T>(grads[head_.bias]));
    std::vector<nn::Feature<T>> skip_grads(d);
    for (int s = 0; s < d; ++s) {
      g = block_backward(decoder_[2 * s + 1], c.decoder[2 * s + 1], std::move(g), grads, true);
      g = block_backward(decoder_[2 * s], c.decoder[2 * s], std::move(g), grads, true);
      auto [gup, gskip] = nn::split_channels(g, up_[s].out_channels);
      skip_grads[s] = std::move(gskip);
      g = nn::upconv_backward(c.up_input[s], up_[s].out_channels, p(up_[s].weight), gup,
                              std::span<T>(grads[up_[s].weight]), std::span<T>(grads[up_[s].bias]));
    }
    for (int s = d; s >= 0; --s) {
      if (s < d)
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += skip_grads[s].data[i];
      g = block_backward(encoder_[2 * s + 1], c.encoder[2 * s + 1], std::move(g), grads, true);
      g = block_backward(encoder_[2 * s], c.encoder[2 * s], std::move(g), grads, s > 0);
    }
  }

  PipelineConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<ParamSpec> specs_;
  std::map<std::string, int> index_;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;
  std::vector<UpConv> up_;
  Block head_{};
  detail::ModelId id_;
  std::uint64_t version_ = 0;
};

using UNetModel = UNet<float>;

}  // namespace cloudseg
