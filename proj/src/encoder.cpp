#include "dircr/encoder.hpp"

#include "dircr/errors.hpp"

namespace dircr {

void EncoderConfig::validate() const {
  if (in_size <= 0 || channels <= 1 || n_blocks < 1) throw ConfigError("encoder sizes must be positive");
  if (downsample_per_block && in_size % (1 << n_blocks) != 0) {
    throw ConfigError("in_size " + std::to_string(in_size) + " is not divisible by 2^" +
                      std::to_string(n_blocks));
  }
}

ResidualBlock::ResidualBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng)
    : conv1(in, out, 3, stride, 1, false, rng),
      norm1(out),
      conv2(out, out, 3, 1, 1, false, rng),
      norm2(out) {
  register_module("conv1", conv1);
  register_module("norm1", norm1);
  register_module("conv2", conv2);
  register_module("norm2", norm2);
  if (stride != 1 || in != out) {
    shortcut = std::make_unique<nn::Conv2d>(in, out, 1, stride, 0, false, rng);
    register_module("shortcut", *shortcut);
  }
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor h = ops::relu(norm1.forward(conv1.forward(x)));
  h = norm2.forward(conv2.forward(h));
  Tensor skip = shortcut ? shortcut->forward(x) : x;
  return ops::relu(ops::add(h, skip));
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::int64_t in = 1;
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::int64_t out = cfg_.block_width(i);
    blocks.push_back(std::make_unique<ResidualBlock>(in, out, cfg_.downsample_per_block ? 2 : 1, rng));
    register_module("block" + std::to_string(i), *blocks.back());
    in = out;
  }
}

Tensor Encoder::forward(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != cfg_.in_size ||
      images.dim(3) != cfg_.in_size) {
    throw ShapeMismatch("encoder expects [N,1," + std::to_string(cfg_.in_size) + "," +
                        std::to_string(cfg_.in_size) + "], got " + shape_str(images.shape()));
  }
  Tensor h = images;
  for (auto& b : blocks) h = b->forward(h);
  return h;
}

}  // namespace dircr
