// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/random.hpp"

namespace obbkit {

/// Dense C x H x W feature map stored channel-major.
struct FeatureMap {
  double stride = 1.0;  // pixels per cell
  std::vector<Eigen::MatrixXd> channels;

  int channel_count() const { return static_cast<int>(channels.size()); }
  Eigen::Index height() const { return channels.empty() ? 0 : channels[0].rows(); }
  Eigen::Index width() const { return channels.empty() ? 0 : channels[0].cols(); }

  static FeatureMap zeros(int channel_count, Eigen::Index h, Eigen::Index w,
                          double stride) {
    FeatureMap m;
    m.stride = stride;
    m.channels.assign(static_cast<std::size_t>(channel_count),
                      Eigen::MatrixXd::Zero(h, w));
    return m;
  }
};

/// Pyramid levels ordered by stride 4, 8, 16, 32, 64.
struct FeaturePyramid {
  std::vector<FeatureMap> levels;
};

inline constexpr std::array<double, 5> kPyramidStrides{4, 8, 16, 32, 64};

// Index of the stride-8 level, whose spatial size the fusion targets.
inline constexpr std::size_t kFusedLevelIndex = 1;

namespace detail {

inline void check_map(const FeatureMap& m, const char* where) {
  if (m.channels.empty()) throw ShapeError(std::string(where) + ": empty feature map");
  for (const auto& ch : m.channels) {
    if (ch.rows() != m.height() || ch.cols() != m.width() || ch.rows() < 1 ||
        ch.cols() < 1) {
      throw ShapeError(std::string(where) + ": inconsistent channel shapes");
    }
  }
}

}  // namespace detail

/// 3x3 convolution weights: taps[out_channel][in_channel] plus per-output bias.
struct ConvKernel3x3 {
  std::vector<std::vector<Eigen::Matrix3d>> taps;
  Eigen::VectorXd bias;

  static ConvKernel3x3 zeros(int out_channels, int in_channels) {
    ConvKernel3x3 k;
    k.taps.assign(out_channels,
                  std::vector<Eigen::Matrix3d>(in_channels, Eigen::Matrix3d::Zero()));
    k.bias = Eigen::VectorXd::Zero(out_channels);
    return k;
  }

  /// Center-tap identity kernel (pass-through convolution).
  static ConvKernel3x3 identity(int channels) {
    ConvKernel3x3 k = zeros(channels, channels);
    for (int c = 0; c < channels; ++c) k.taps[c][c](1, 1) = 1.0;
    return k;
  }
};

/// Weights of the fusion/reduction path.
struct SgcmParams {
  std::vector<Eigen::MatrixXd> level_proj;  // per-level 1x1, each C x C
  Eigen::MatrixXd attn_query;               // C x C
  Eigen::MatrixXd attn_key;                 // C x C
  Eigen::MatrixXd attn_value;               // C x C
  ConvKernel3x3 conv1;
  ConvKernel3x3 conv2;
  bool conv_relu = true;  // ReLU after each 3x3 conv; off for the linear path
  Eigen::MatrixXd semantic_proj;  // C x C
  Eigen::VectorXd semantic_bias;  // C
  Eigen::MatrixXd mask_head;      // C x 2
  Eigen::VectorXd mask_bias;      // 2

  Eigen::Index channels() const { return semantic_proj.rows(); }

  static SgcmParams random(Eigen::Index channels, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    auto mat = [&](Eigen::Index r, Eigen::Index c) {
      return uniform_matrix(r, c, -bound, bound, rng);
    };
    SgcmParams p;
    p.level_proj.reserve(kPyramidStrides.size());
    for (std::size_t i = 0; i < kPyramidStrides.size(); ++i) {
      p.level_proj.push_back(mat(channels, channels));
    }
    p.attn_query = mat(channels, channels);
    p.attn_key = mat(channels, channels);
    p.attn_value = mat(channels, channels);
    const int c = static_cast<int>(channels);
    p.conv1 = ConvKernel3x3::zeros(c, c);
    p.conv2 = ConvKernel3x3::zeros(c, c);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto* conv : {&p.conv1, &p.conv2}) {
      for (auto& row : conv->taps) {
        for (auto& tap : row) {
          for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) tap(i, j) = dist(rng);
          }
        }
      }
      conv->bias = uniform_vector(channels, -bound, bound, rng);
    }
    p.semantic_proj = mat(channels, channels);
    p.semantic_bias = uniform_vector(channels, -bound, bound, rng);
    p.mask_head = mat(channels, 2);
    p.mask_bias = uniform_vector(2, -bound, bound, rng);
    return p;
  }

  /// Identity projections, pass-through convolutions, zero attention value
  /// and zero biases; useful as a neutral starting point.
  static SgcmParams identity(Eigen::Index channels) {
    const int c = static_cast<int>(channels);
    SgcmParams p;
    p.level_proj.assign(kPyramidStrides.size(),
                        Eigen::MatrixXd::Identity(channels, channels));
    p.attn_query = Eigen::MatrixXd::Identity(channels, channels);
    p.attn_key = Eigen::MatrixXd::Identity(channels, channels);
    p.attn_value = Eigen::MatrixXd::Zero(channels, channels);
    p.conv1 = ConvKernel3x3::identity(c);
    p.conv2 = ConvKernel3x3::identity(c);
    p.conv_relu = false;
    p.semantic_proj = Eigen::MatrixXd::Identity(channels, channels);
    p.semantic_bias = Eigen::VectorXd::Zero(channels);
    p.mask_head = Eigen::MatrixXd::Zero(channels, 2);
    p.mask_bias = Eigen::VectorXd::Zero(2);
    return p;
  }
};

/// Per-position linear map across channels (a 1x1 convolution). Channel
/// vectors act as rows: y = x * weight (+ bias).
inline FeatureMap project_1x1(const FeatureMap& map, const Eigen::MatrixXd& weight,
                              const Eigen::VectorXd& bias = Eigen::VectorXd()) {
  detail::check_map(map, "project_1x1");
  if (weight.rows() != map.channel_count()) {
    throw ShapeError("project_1x1: weight rows must equal input channels");
  }
  if (bias.size() != 0 && bias.size() != weight.cols()) {
    throw ShapeError("project_1x1: bias length must equal output channels");
  }
  FeatureMap out = FeatureMap::zeros(static_cast<int>(weight.cols()), map.height(),
                                     map.width(), map.stride);
  for (Eigen::Index oc = 0; oc < weight.cols(); ++oc) {
    for (Eigen::Index ic = 0; ic < weight.rows(); ++ic) {
      const double w = weight(ic, oc);
      if (w != 0.0) out.channels[oc] += w * map.channels[ic];
    }
    if (bias.size() != 0) out.channels[oc].array() += bias(oc);
  }
  return out;
}

/// Half-pixel-center bilinear resampling. Identity when the output size
/// matches the input; constant maps stay constant.
inline Eigen::MatrixXd bilinear_resize_plane(const Eigen::MatrixXd& in,
                                             Eigen::Index out_h, Eigen::Index out_w) {
  if (out_h < 1 || out_w < 1) throw ValidationError("bilinear_resize: output dims must be >= 1");
  const Eigen::Index in_h = in.rows();
  const Eigen::Index in_w = in.cols();
  Eigen::MatrixXd out(out_h, out_w);
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (Eigen::Index r = 0; r < out_h; ++r) {
    double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
    const Eigen::Index y0 = static_cast<Eigen::Index>(fy);
    const Eigen::Index y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (Eigen::Index c = 0; c < out_w; ++c) {
      double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
      const Eigen::Index x0 = static_cast<Eigen::Index>(fx);
      const Eigen::Index x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      out(r, c) = (1.0 - wy) * ((1.0 - wx) * in(y0, x0) + wx * in(y0, x1)) +
                  wy * ((1.0 - wx) * in(y1, x0) + wx * in(y1, x1));
    }
  }
  return out;
}

/// Channel-wise bilinear resize; the stride field is carried over unchanged
/// and callers adjust it where the resize changes the geometric meaning.
inline FeatureMap bilinear_resize(const FeatureMap& map, Eigen::Index out_h,
                                  Eigen::Index out_w) {
  detail::check_map(map, "bilinear_resize");
  FeatureMap out;
  out.stride = map.stride;
  out.channels.reserve(map.channels.size());
  for (const auto& ch : map.channels) {
    out.channels.push_back(bilinear_resize_plane(ch, out_h, out_w));
  }
  return out;
}

/// Bilinear 2x downsample helper for building synthetic pyramids.
inline FeatureMap downsample_2x(const FeatureMap& map) {
  FeatureMap out = bilinear_resize(map, (map.height() + 1) / 2, (map.width() + 1) / 2);
  out.stride = map.stride * 2.0;
  return out;
}

/// Single-head scaled dot-product self-attention over the H*W positions with
/// a residual connection: out = x + softmax(Q K^T / sqrt(C)) V. Attention
/// weight rows sum to 1. No positional encoding, so a constant map stays
/// constant.
inline FeatureMap self_attention(const FeatureMap& map, const SgcmParams& params) {
  detail::check_map(map, "self_attention");
  const Eigen::Index c = map.channel_count();
  if (params.attn_query.rows() != c || params.attn_key.rows() != c ||
      params.attn_value.rows() != c) {
    throw ShapeError("self_attention: projection shapes do not match channels");
  }
  const Eigen::Index h = map.height();
  const Eigen::Index w = map.width();
  const Eigen::Index tokens = h * w;
  Eigen::MatrixXd x(tokens, c);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index cc = 0; cc < w; ++cc) {
        x(r * w + cc, ch) = map.channels[ch](r, cc);
      }
    }
  }
  const Eigen::MatrixXd q = x * params.attn_query;
  const Eigen::MatrixXd k = x * params.attn_key;
  const Eigen::MatrixXd v = x * params.attn_value;
  Eigen::MatrixXd weights = q * k.transpose() / std::sqrt(static_cast<double>(c));
  for (Eigen::Index i = 0; i < tokens; ++i) {
    const double m = weights.row(i).maxCoeff();
    const Eigen::ArrayXd e = (weights.row(i).array() - m).exp();
    weights.row(i) = (e / e.sum()).matrix();
  }
  const Eigen::MatrixXd y = x + weights * v;
  FeatureMap out = FeatureMap::zeros(static_cast<int>(c), h, w, map.stride);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index cc = 0; cc < w; ++cc) {
        out.channels[ch](r, cc) = y(r * w + cc, ch);
      }
    }
  }
  return out;
}

/// 3x3 convolution with zero padding 1 and stride 1, optional ReLU.
inline FeatureMap conv3x3(const FeatureMap& map, const ConvKernel3x3& kernel,
                          bool relu) {
  detail::check_map(map, "conv3x3");
  const int in_c = map.channel_count();
  const int out_c = static_cast<int>(kernel.taps.size());
  if (out_c == 0 || static_cast<int>(kernel.taps[0].size()) != in_c) {
    throw ShapeError("conv3x3: kernel channels do not match input");
  }
  if (kernel.bias.size() != out_c) {
    throw ShapeError("conv3x3: bias length must equal output channels");
  }
  const Eigen::Index h = map.height();
  const Eigen::Index w = map.width();
  FeatureMap out = FeatureMap::zeros(out_c, h, w, map.stride);
  for (int oc = 0; oc < out_c; ++oc) {
    Eigen::MatrixXd& acc = out.channels[oc];
    acc.array() += kernel.bias(oc);
    for (int ic = 0; ic < in_c; ++ic) {
      const Eigen::MatrixXd& src = map.channels[ic];
      const Eigen::Matrix3d& tap = kernel.taps[oc][ic];
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double tw = tap(dy + 1, dx + 1);
          if (tw == 0.0) continue;
          const Eigen::Index r0 = std::max<Eigen::Index>(0, -dy);
          const Eigen::Index r1 = std::min(h, h - dy);
          const Eigen::Index c0 = std::max<Eigen::Index>(0, -dx);
          const Eigen::Index c1 = std::min(w, w - dx);
          if (r1 <= r0 || c1 <= c0) continue;
          acc.block(r0, c0, r1 - r0, c1 - c0) +=
              tw * src.block(r0 + dy, c0 + dx, r1 - r0, c1 - c0);
        }
      }
    }
    if (relu) acc = acc.cwiseMax(0.0);
  }
  return out;
}

namespace detail {

inline void check_pyramid(const FeaturePyramid& pyr, const char* where) {
  if (pyr.levels.size() != kPyramidStrides.size()) {
    throw ShapeError(std::string(where) + ": pyramid must have 5 levels");
  }
  const int c = pyr.levels[0].channel_count();
  for (std::size_t i = 0; i < pyr.levels.size(); ++i) {
    check_map(pyr.levels[i], where);
    if (pyr.levels[i].stride != kPyramidStrides[i]) {
      throw ShapeError(std::string(where) + ": unexpected level stride");
    }
    if (pyr.levels[i].channel_count() != c) {
      throw ShapeError(std::string(where) + ": inconsistent channel counts");
    }
  }
}

}  // namespace detail

/// Fusion phase: self-attention on the stride-64 level, per-level 1x1
/// projections, bilinear resize of every level to the stride-8 size, an
/// elementwise sum, then the two 3x3 convolutions. Returns the fused
/// stride-8 feature.
inline FeatureMap fuse_pyramid(const FeaturePyramid& pyr, const SgcmParams& params) {
  detail::check_pyramid(pyr, "fuse_pyramid");
  if (params.level_proj.size() != pyr.levels.size()) {
    throw ShapeError("fuse_pyramid: need one 1x1 projection per level");
  }
  const FeatureMap& target = pyr.levels[kFusedLevelIndex];
  const Eigen::Index out_h = target.height();
  const Eigen::Index out_w = target.width();
  FeatureMap sum = FeatureMap::zeros(target.channel_count(), out_h, out_w,
                                     target.stride);
  for (std::size_t i = 0; i < pyr.levels.size(); ++i) {
    FeatureMap level = (i + 1 == pyr.levels.size())
                           ? self_attention(pyr.levels[i], params)
                           : pyr.levels[i];
    level = project_1x1(level, params.level_proj[i]);
    level = bilinear_resize(level, out_h, out_w);
    for (int ch = 0; ch < sum.channel_count(); ++ch) {
      sum.channels[ch] += level.channels[ch];
    }
  }
  FeatureMap fused = conv3x3(sum, params.conv1, params.conv_relu);
  fused = conv3x3(fused, params.conv2, params.conv_relu);
  fused.stride = target.stride;
  return fused;
}

/// Two-class mask logits: 1x1 projection of the fused feature.
inline FeatureMap mask_logits(const FeatureMap& fused, const SgcmParams& params) {
  return project_1x1(fused, params.mask_head, params.mask_bias);
}

/// Rasterizes the union of the boxes onto a grid of the given stride. A cell
/// is set iff its center point lies inside any box polygon (boundary
/// inclusive). Grid dims are the ceil division of the image dims by stride.
inline Eigen::MatrixXi rasterize_pseudo_mask(std::span<const Obb> boxes, int image_h,
                                             int image_w, int stride) {
  if (stride < 1) throw ValidationError("rasterize_pseudo_mask: stride must be >= 1");
  if (image_h < 1 || image_w < 1) {
    throw ValidationError("rasterize_pseudo_mask: image dims must be >= 1");
  }
  const Eigen::Index rows = (image_h + stride - 1) / stride;
  const Eigen::Index cols = (image_w + stride - 1) / stride;
  Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(rows, cols);
  const double s = static_cast<double>(stride);
  for (const Obb& box : boxes) {
    const ConvexPolygon poly = corners(box);
    double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
    double min_y = min_x, max_y = -min_x;
    for (const Vec2& v : poly.vertices) {
      min_x = std::min(min_x, v.x);
      max_x = std::max(max_x, v.x);
      min_y = std::min(min_y, v.y);
      max_y = std::max(max_y, v.y);
    }
    const Eigen::Index r0 = std::max<Eigen::Index>(
        0, static_cast<Eigen::Index>(std::floor(min_y / s - 0.5)));
    const Eigen::Index r1 = std::min(
        rows - 1, static_cast<Eigen::Index>(std::ceil(max_y / s)));
    const Eigen::Index c0 = std::max<Eigen::Index>(
        0, static_cast<Eigen::Index>(std::floor(min_x / s - 0.5)));
    const Eigen::Index c1 = std::min(
        cols - 1, static_cast<Eigen::Index>(std::ceil(max_x / s)));
    for (Eigen::Index r = r0; r <= r1; ++r) {
      for (Eigen::Index c = c0; c <= c1; ++c) {
        if (mask(r, c)) continue;
        const Vec2 center{(static_cast<double>(c) + 0.5) * s,
                          (static_cast<double>(r) + 0.5) * s};
        if (contains(poly, center)) mask(r, c) = 1;
      }
    }
  }
  return mask;
}

/// Mean two-class softmax cross-entropy against a binary mask, with the
/// analytic gradient w.r.t. the logits: (softmax - onehot) / (H * W).
struct SegLossResult {
  double loss = 0.0;
  FeatureMap grad;
};

inline SegLossResult seg_loss(const FeatureMap& logits, const Eigen::MatrixXi& mask) {
  detail::check_map(logits, "seg_loss");
  if (logits.channel_count() != 2) {
    throw ShapeError("seg_loss: logits must have exactly 2 channels");
  }
  if (logits.height() != mask.rows() || logits.width() != mask.cols()) {
    throw ShapeError("seg_loss: logits and mask dims differ");
  }
  const Eigen::Index h = logits.height();
  const Eigen::Index w = logits.width();
  const double count = static_cast<double>(h * w);
  SegLossResult result;
  result.grad = FeatureMap::zeros(2, h, w, logits.stride);
  double total = 0.0;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      const double l0 = logits.channels[0](r, c);
      const double l1 = logits.channels[1](r, c);
      const int target = mask(r, c) ? 1 : 0;
      const double m = std::max(l0, l1);
      const double e0 = std::exp(l0 - m);
      const double e1 = std::exp(l1 - m);
      const double z = e0 + e1;
      total += m + std::log(z) - (target == 1 ? l1 : l0);
      result.grad.channels[0](r, c) = (e0 / z - (target == 0 ? 1.0 : 0.0)) / count;
      result.grad.channels[1](r, c) = (e1 / z - (target == 1 ? 1.0 : 0.0)) / count;
    }
  }
  result.loss = total / count;
  return result;
}

/// Reduction phase: project the fused feature with the semantic 1x1, resize
/// it to each level and add elementwise. Output shapes and strides equal the
/// input pyramid's.
inline FeaturePyramid reduce(const FeaturePyramid& pyr, const FeatureMap& fused,
                             const SgcmParams& params) {
  detail::check_pyramid(pyr, "reduce");
  detail::check_map(fused, "reduce");
  if (fused.stride != kPyramidStrides[kFusedLevelIndex]) {
    throw ShapeError("reduce: fused feature must be at stride 8");
  }
  const FeatureMap semantic =
      project_1x1(fused, params.semantic_proj, params.semantic_bias);
  FeaturePyramid out;
  out.levels.reserve(pyr.levels.size());
  for (const FeatureMap& level : pyr.levels) {
    FeatureMap resized = bilinear_resize(semantic, level.height(), level.width());
    FeatureMap enhanced = level;
    for (int ch = 0; ch < enhanced.channel_count(); ++ch) {
      enhanced.channels[ch] += resized.channels[ch];
    }
    out.levels.push_back(std::move(enhanced));
  }
  return out;
}

}  // namespace obbkit
