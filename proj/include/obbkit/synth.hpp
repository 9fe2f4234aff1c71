// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "obbkit/data_io.hpp"
#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/random.hpp"

namespace obbkit {

/// Synthetic scene parameters. Ground-truth boxes are placed on a per-image
/// grid with enough margin that they stay pairwise disjoint; detections are
/// the ground truth with Gaussian jitter of relative magnitude `noise` on
/// center, extents and angle.
struct SynthConfig {
  int images = 100;
  int boxes_per_image = 20;
  std::uint64_t seed = 42;
  double noise = 0.0;
  int image_size = 800;
  int regions = 1;
};

struct SynthScene {
  std::vector<BoxRecord> ground_truth;  // no scores
  std::vector<BoxRecord> detections;    // scored
};

inline SynthScene make_synthetic_scene(const SynthConfig& cfg) {
  if (cfg.images < 0 || cfg.boxes_per_image < 0) {
    throw ValidationError("synth: images and boxes-per-image must be >= 0");
  }
  if (cfg.image_size < 8 || cfg.regions < 1) {
    throw ValidationError("synth: image_size must be >= 8 and regions >= 1");
  }
  SynthScene scene;
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(
                                   static_cast<double>(cfg.boxes_per_image)))));
  const int rows = cfg.boxes_per_image == 0
                       ? 1
                       : (cfg.boxes_per_image + cols - 1) / cols;
  const double cell_w = static_cast<double>(cfg.image_size) / cols;
  const double cell_h = static_cast<double>(cfg.image_size) / rows;
  // Bounding circle at most 0.3 * cell and center jitter at most 0.15 * cell,
  // so boxes never leave their cell and pairwise IoU stays 0.
  const double lim = std::min(cell_w, cell_h);
  const double ext_lo = 0.20 * lim / std::numbers::sqrt2;
  const double ext_hi = 0.60 * lim / std::numbers::sqrt2;

  for (int img = 0; img < cfg.images; ++img) {
    char image_id[32];
    std::snprintf(image_id, sizeof image_id, "img_%06d", img);
    const std::string region_id = "r" + std::to_string(img % cfg.regions);
    for (int k = 0; k < cfg.boxes_per_image; ++k) {
      const int gc = k % cols;
      const int gr = k / cols;
      const double w = ext_lo + (ext_hi - ext_lo) * unit(rng);
      const double h = ext_lo + (ext_hi - ext_lo) * unit(rng);
      const double jx = (unit(rng) - 0.5) * 0.3 * lim;
      const double jy = (unit(rng) - 0.5) * 0.3 * lim;
      const double theta = (unit(rng) - 0.5) * kPi;
      const Obb gt_box{(gc + 0.5) * cell_w + jx, (gr + 0.5) * cell_h + jy, w, h, theta};

      Obb det_box = gt_box;
      det_box.cx += gauss(rng) * cfg.noise * gt_box.w;
      det_box.cy += gauss(rng) * cfg.noise * gt_box.h;
      det_box.w *= std::max(0.05, 1.0 + gauss(rng) * cfg.noise);
      det_box.h *= std::max(0.05, 1.0 + gauss(rng) * cfg.noise);
      det_box.theta += gauss(rng) * cfg.noise;
      det_box = canonicalize(det_box);
      const double score = 0.1 + 0.9 * unit(rng);

      scene.ground_truth.push_back({image_id, region_id, gt_box, std::nullopt, {}, 0});
      scene.detections.push_back({image_id, region_id, det_box, score, {}, 0});
    }
  }
  return scene;
}

}  // namespace obbkit
