#pragma once

#include <memory>
#include <vector>

#include "dircr/nn.hpp"

namespace dircr {

struct EncoderConfig {
  int in_size = 80;
  int channels = 64;
  int n_blocks = 4;
  bool downsample_per_block = true;

  /// Spatial side of the output feature map.
  int out_size() const { return downsample_per_block ? in_size >> n_blocks : in_size; }
  /// Output width of block `i`: half width in the first block, full after.
  int block_width(int i) const { return i == 0 && n_blocks > 1 ? channels / 2 : channels; }
  void validate() const;
};

/// Conv3x3(stride) -> BN -> ReLU -> Conv3x3 -> BN, plus a skip path (identity
/// when shapes allow, otherwise a strided 1x1 conv), then ReLU.
class ResidualBlock : public nn::Module {
 public:
  ResidualBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng);
  Tensor forward(const Tensor& x);

  nn::Conv2d conv1;
  nn::BatchNorm norm1;
  nn::Conv2d conv2;
  nn::BatchNorm norm2;
  std::unique_ptr<nn::Conv2d> shortcut;
};

/// Panel encoder: [N, 1, H, W] images in [0, 1] -> [N, C, h, w] features.
/// One instance encodes context panels and candidates alike.
class Encoder : public nn::Module {
 public:
  Encoder(const EncoderConfig& cfg, Rng& rng);
  /// Throws ShapeMismatch unless the input is [N, 1, in_size, in_size].
  Tensor forward(const Tensor& images);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<std::unique_ptr<ResidualBlock>> blocks;

 private:
  EncoderConfig cfg_;
};

}  // namespace dircr
