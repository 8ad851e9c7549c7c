#pragma once

#include <array>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "docunet/conv.hpp"
#include "docunet/params.hpp"

namespace docunet {

/// Channel schedule [C_in, c1, c2, c3, c4, C_out]. Down blocks output c1 and
/// c2, up blocks output c3 and c4, and a final 1x1 convolution maps c4 to C_out.
struct UNetConfig {
  std::array<std::size_t, 6> channels{3, 16, 32, 16, 8, 16};
  std::size_t kernel = 3;
  std::size_t pool = 2;

  void validate() const {
    for (auto c : channels)
      if (c == 0) throw ConfigError("U-Net channel counts must be positive");
    if (kernel % 2 == 0) throw ConfigError("U-Net kernel size must be odd");
    if (pool != 2) throw ConfigError("U-Net pool window must be 2");
  }
};

/// Maps a [C_in x N x N] relation image to [C_out x N x N] cell features.
class PairMixer {
 public:
  virtual ~PairMixer() = default;
  virtual Tensor forward(const Tensor& image) const = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
};

struct ConvLayer {
  Tensor kernel, bias;

  static ConvLayer make(ParamStore& store, const std::string& name, std::size_t cin,
                        std::size_t cout, std::size_t k, std::mt19937_64& rng) {
    return {store.add(name + ".w", init::he_kernel(cout, cin, k, rng), true, ParamGroup::Head),
            store.add(name + ".b", Tensor::zeros({cout}), false, ParamGroup::Head)};
  }

  Tensor operator()(const Tensor& x) const {
    return add_channel_bias(conv2d(x, kernel, 1, kernel.dim(2) / 2), bias);
  }
};

struct DownBlock {
  ConvLayer conv1, conv2;

  /// Returns {pooled output, pre-pool skip}.
  std::pair<Tensor, Tensor> operator()(const Tensor& x) const {
    if (x.dim(1) % 2 || x.dim(2) % 2) {
      throw DimensionError(detail::cat("down block: odd spatial extent ", x.dim(1), "x", x.dim(2)));
    }
    Tensor skip = relu(conv2(relu(conv1(x))));
    return {max_pool2d(skip, 2), skip};
  }
};

struct UpBlock {
  Tensor up_kernel, up_bias;  // transposed conv [c_in x c_skip x 2 x 2]
  ConvLayer conv1, conv2;

  Tensor operator()(const Tensor& x, const Tensor& skip) const {
    Tensor up = add_channel_bias(transposed_conv2d(x, up_kernel, 2), up_bias);
    if (up.dim(1) != skip.dim(1) || up.dim(2) != skip.dim(2)) {
      throw DimensionError(detail::cat("up block: upsampled ", detail::shape_str(up.shape()),
                                       " does not match skip ", detail::shape_str(skip.shape())));
    }
    return relu(conv2(relu(conv1(concat({up, skip}, 0)))));
  }
};

/// Two down-sampling blocks, two up-sampling blocks with concatenated skip
/// connections, and a 1x1 output projection. Inputs of any size are padded
/// to a multiple of 4 and the output is cropped back.
class UNet : public PairMixer {
 public:
  UNet(const UNetConfig& cfg, ParamStore& store, std::mt19937_64& rng, const std::string& name = "unet")
      : cfg_(cfg) {
    cfg_.validate();
    const auto& c = cfg_.channels;
    const std::size_t k = cfg_.kernel;
    down_[0] = {ConvLayer::make(store, name + ".down0.conv1", c[0], c[1], k, rng),
                ConvLayer::make(store, name + ".down0.conv2", c[1], c[1], k, rng)};
    down_[1] = {ConvLayer::make(store, name + ".down1.conv1", c[1], c[2], k, rng),
                ConvLayer::make(store, name + ".down1.conv2", c[2], c[2], k, rng)};
    // up0: from the bottleneck (c2) back to the down1 skip (c2 channels).
    up_[0] = make_up(store, name + ".up0", c[2], c[2], c[3], rng);
    // up1: from c3 back to the down0 skip (c1 channels).
    up_[1] = make_up(store, name + ".up1", c[3], c[1], c[4], rng);
    out_ = ConvLayer::make(store, name + ".out", c[4], c[5], 1, rng);
  }

  Tensor forward(const Tensor& image) const override {
    if (image.rank() != 3 || image.dim(0) != cfg_.channels[0] || image.dim(1) != image.dim(2)) {
      throw DimensionError(detail::cat("unet: expected [", cfg_.channels[0], " x N x N], got ",
                                       detail::shape_str(image.shape())));
    }
    const std::size_t n = image.dim(1), padded = padded_size(n);
    const std::size_t before = (padded - n) / 2, after = padded - n - before;
    Tensor x = pad(pad(image, 1, before, after), 2, before, after);
    auto [d0, skip0] = down_[0](x);
    auto [d1, skip1] = down_[1](d0);
    Tensor u0 = up_[0](d1, skip1);
    Tensor u1 = up_[1](u0, skip0);
    Tensor y = out_(u1);
    if (padded == n) return y;
    return slice(slice(y, 1, before, before + n), 2, before, before + n);
  }

  std::size_t in_channels() const override { return cfg_.channels[0]; }
  std::size_t out_channels() const override { return cfg_.channels[5]; }
  const UNetConfig& config() const { return cfg_; }

  /// Smallest multiple of 4 that is >= n (two halvings).
  static std::size_t padded_size(std::size_t n) { return (n + 3) / 4 * 4; }

  /// Learnable scalar count of a U-Net with this configuration.
  static std::size_t parameter_count(const UNetConfig& cfg) {
    const auto& c = cfg.channels;
    const std::size_t k2 = cfg.kernel * cfg.kernel;
    auto conv = [&](std::size_t i, std::size_t o, std::size_t kk) { return i * o * kk + o; };
    return conv(c[0], c[1], k2) + conv(c[1], c[1], k2) + conv(c[1], c[2], k2) +
           conv(c[2], c[2], k2) + (c[2] * c[2] * 4 + c[2]) + conv(2 * c[2], c[3], k2) +
           conv(c[3], c[3], k2) + (c[3] * c[1] * 4 + c[1]) + conv(2 * c[1], c[4], k2) +
           conv(c[4], c[4], k2) + conv(c[4], c[5], 1);
  }

  DownBlock down_block(std::size_t i) const { return down_.at(i); }
  UpBlock up_block(std::size_t i) const { return up_.at(i); }

 private:
  static UpBlock make_up(ParamStore& store, const std::string& name, std::size_t cin,
                         std::size_t cskip, std::size_t cout, std::mt19937_64& rng) {
    UpBlock b;
    b.up_kernel = store.add(name + ".tconv.w",
                            init::normal({cin, cskip, 2, 2}, std::sqrt(1.0 / double(cin)), rng),
                            true, ParamGroup::Head);
    b.up_bias = store.add(name + ".tconv.b", Tensor::zeros({cskip}), false, ParamGroup::Head);
    b.conv1 = ConvLayer::make(store, name + ".conv1", 2 * cskip, cout, 3, rng);
    b.conv2 = ConvLayer::make(store, name + ".conv2", cout, cout, 3, rng);
    return b;
  }

  UNetConfig cfg_;
  std::array<DownBlock, 2> down_;
  std::array<UpBlock, 2> up_;
  ConvLayer out_;
};

/// Per-cell multilayer network built from 1x1 convolutions: the ablation
/// replacement for the U-Net. Output cell (s, o) depends only on input cell
/// (s, o).
class CellFFN : public PairMixer {
 public:
  CellFFN(std::size_t in, std::size_t hidden, std::size_t out, ParamStore& store,
          std::mt19937_64& rng, const std::string& name = "ffn", std::size_t hidden_layers = 2)
      : in_(in), out_(out) {
    if (hidden_layers == 0 || hidden == 0) throw ConfigError("cell FFN needs a hidden layer");
    std::size_t width = in;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      layers_.push_back(ConvLayer::make(store, name + ".l" + std::to_string(l + 1), width, hidden, 1, rng));
      width = hidden;
    }
    layers_.push_back(
        ConvLayer::make(store, name + ".l" + std::to_string(hidden_layers + 1), width, out, 1, rng));
  }

  Tensor forward(const Tensor& image) const override {
    Tensor x = image;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) x = relu(layers_[l](x));
    return layers_.back()(x);
  }
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }
  std::size_t hidden_layers() const { return layers_.size() - 1; }

  static std::size_t parameter_count(std::size_t in, std::size_t hidden, std::size_t out,
                                     std::size_t hidden_layers = 2) {
    return in * hidden + hidden + (hidden_layers - 1) * (hidden * hidden + hidden) + hidden * out + out;
  }

  /// Hidden width whose parameter count is closest to `budget`.
  static std::size_t width_for_budget(std::size_t in, std::size_t out, std::size_t budget,
                                      std::size_t hidden_layers = 2) {
    std::size_t best = 1;
    auto gap = [&](std::size_t h) {
      const double c = double(parameter_count(in, h, out, hidden_layers));
      return std::abs(c - double(budget));
    };
    for (std::size_t h = 1; parameter_count(in, h, out, hidden_layers) <= 2 * budget + 1; ++h) {
      if (gap(h) < gap(best)) best = h;
    }
    return best;
  }

 private:
  std::size_t in_, out_;
  std::vector<ConvLayer> layers_;
};

}  // namespace docunet
