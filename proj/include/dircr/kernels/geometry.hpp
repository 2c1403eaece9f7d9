#pragma once

#include <cstdint>

namespace dircr::kernels {

/// Dimensions of a square-kernel 2-D convolution over NCHW tensors.
struct Conv2dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t pad = 1;

  std::int64_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::int64_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::int64_t patch_size() const { return in_channels * kernel * kernel; }
  std::int64_t in_size() const { return batch * in_channels * height * width; }
  std::int64_t out_size() const { return batch * out_channels * out_height() * out_width(); }
  std::int64_t weight_size() const { return out_channels * patch_size(); }
};

/// Per-channel normalization over an [N, C, S] view (S = spatial extent).
struct NormGeometry {
  std::int64_t batch = 1;
  std::int64_t channels = 1;
  std::int64_t spatial = 1;

  std::int64_t size() const { return batch * channels * spatial; }
  std::int64_t per_channel() const { return batch * spatial; }
};

}  // namespace dircr::kernels
