#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "napkit/error.hpp"
#include "napkit/tensor.hpp"

namespace napkit {

enum class DownsampleMethod { subsample, avgpool };

inline std::string_view to_string(DownsampleMethod m) {
  return m == DownsampleMethod::subsample ? "subsample" : "avgpool";
}

inline DownsampleMethod parse_downsample_method(std::string_view s) {
  if (s == "subsample") return DownsampleMethod::subsample;
  if (s == "avgpool") return DownsampleMethod::avgpool;
  throw Error(ErrorKind::argument, "unknown downsample method '" + std::string(s) + "'");
}

struct SpatialDims {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

// Window/stride shared by both methods: n = ceil(max(H, W) / max_hw), at least 1.
inline std::size_t downsample_factor(std::size_t height, std::size_t width, std::size_t max_hw) {
  if (max_hw == 0) throw Error(ErrorKind::argument, "max_hw must be positive");
  const std::size_t longest = std::max(height, width);
  return std::max<std::size_t>(1, (longest + max_hw - 1) / max_hw);
}

inline SpatialDims downsampled_dims(SpatialDims in, std::size_t max_hw) {
  const std::size_t n = downsample_factor(in.height, in.width, max_hw);
  return {(in.height + n - 1) / n, (in.width + n - 1) / n, in.channels};
}

/// Downsample one [H, W, C] example into `out` (sized per `downsampled_dims`).
template <typename T>
void downsample_example(std::span<const T> in, SpatialDims dims, DownsampleMethod method, std::size_t max_hw,
                        std::span<T> out) {
  const std::size_t n = downsample_factor(dims.height, dims.width, max_hw);
  const SpatialDims od = downsampled_dims(dims, max_hw);
  const std::size_t C = dims.channels;
  if (in.size() != dims.height * dims.width * C || out.size() != od.height * od.width * C) {
    throw Error(ErrorKind::shape, "downsample: buffer sizes do not match dimensions");
  }
  if (n == 1) {
    std::copy(in.begin(), in.end(), out.begin());
    return;
  }
  if (method == DownsampleMethod::subsample) {
    for (std::size_t i = 0; i < od.height; ++i) {
      for (std::size_t j = 0; j < od.width; ++j) {
        const T* src = in.data() + ((i * n) * dims.width + j * n) * C;
        std::copy(src, src + C, out.data() + (i * od.width + j) * C);
      }
    }
    return;
  }
  std::vector<double> acc(C);
  for (std::size_t i = 0; i < od.height; ++i) {
    for (std::size_t j = 0; j < od.width; ++j) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const std::size_t y1 = std::min(dims.height, (i + 1) * n);
      const std::size_t x1 = std::min(dims.width, (j + 1) * n);
      for (std::size_t y = i * n; y < y1; ++y) {
        for (std::size_t x = j * n; x < x1; ++x) {
          const T* src = in.data() + (y * dims.width + x) * C;
          for (std::size_t c = 0; c < C; ++c) acc[c] += static_cast<double>(src[c]);
        }
      }
      // Ragged edge windows average only the cells they cover.
      const double cells = static_cast<double>((y1 - i * n) * (x1 - j * n));
      T* dst = out.data() + (i * od.width + j) * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] = static_cast<T>(acc[c] / cells);
    }
  }
}

namespace detail {

template <typename T>
BasicTensor<T> downsample(const BasicTensor<T>& t, DownsampleMethod method, std::size_t max_hw) {
  if (t.rank() != 3 && t.rank() != 4) {
    throw Error(ErrorKind::shape,
                "downsample expects rank 3 [H,W,C] or rank 4 [N,H,W,C], got " + shape_string(t.shape()));
  }
  const std::size_t batch = t.rank() == 4 ? t.shape()[0] : 1;
  const std::size_t off = t.rank() == 4 ? 1 : 0;
  const SpatialDims dims{t.shape()[off], t.shape()[off + 1], t.shape()[off + 2]};
  const SpatialDims od = downsampled_dims(dims, max_hw);
  Shape out_shape =
      t.rank() == 4 ? Shape{batch, od.height, od.width, od.channels} : Shape{od.height, od.width, od.channels};
  BasicTensor<T> out(out_shape);
  const std::size_t in_stride = dims.height * dims.width * dims.channels;
  const std::size_t out_stride = od.height * od.width * od.channels;
  for (std::size_t b = 0; b < batch; ++b) {
    downsample_example<T>(t.data().subspan(b * in_stride, in_stride), dims, method, max_hw,
                          out.data().subspan(b * out_stride, out_stride));
  }
  return out;
}

}  // namespace detail

/// Keeps every n-th row and column, anchored at the top-left.
template <typename T>
BasicTensor<T> downsample_subsample(const BasicTensor<T>& t, std::size_t max_hw = 8) {
  return detail::downsample(t, DownsampleMethod::subsample, max_hw);
}

/// Non-overlapping n x n mean pooling; partial windows at the edges are not padded.
template <typename T>
BasicTensor<T> downsample_avgpool(const BasicTensor<T>& t, std::size_t max_hw = 8) {
  return detail::downsample(t, DownsampleMethod::avgpool, max_hw);
}

}  // namespace napkit
