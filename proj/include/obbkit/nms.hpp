// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"

namespace obbkit {

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

/// One scored oriented detection. class_id 0 is background, 1 is building.
struct ScoredDetection {
  Obb box;
  double score = 0.0;
  std::string image_id;
  int class_id = 1;
};

namespace detail {

// Per-box geometry cached for repeated IoU tests inside NMS.
struct BoxGeom {
  ConvexPolygon poly;
  double area = 0.0;
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;

  explicit BoxGeom(const Obb& b) : poly(corners(b)), area(polygon_area(poly)) {
    min_x = min_y = std::numeric_limits<double>::infinity();
    max_x = max_y = -std::numeric_limits<double>::infinity();
    for (const Vec2& v : poly.vertices) {
      min_x = std::min(min_x, v.x);
      max_x = std::max(max_x, v.x);
      min_y = std::min(min_y, v.y);
      max_y = std::max(max_y, v.y);
    }
  }

  bool disjoint_bounds(const BoxGeom& o) const {
    return min_x > o.max_x || o.min_x > max_x || min_y > o.max_y || o.min_y > max_y;
  }
};

// Same arithmetic as rotated_iou; the bounds check only skips pairs whose
// exact IoU is zero, so results match rotated_iou bit for bit.
inline double cached_iou(const BoxGeom& a, const BoxGeom& b) {
  if (a.disjoint_bounds(b)) return 0.0;
  const double inter = polygon_area(intersect_convex(a.poly, b.poly));
  if (inter <= 0.0) return 0.0;
  return std::clamp(inter / (a.area + b.area - inter), 0.0, 1.0);
}

}  // namespace detail

/// Greedy NMS over parallel box/score spans. Returns kept indices in
/// descending score order; ties keep the lower original index. A detection is
/// kept iff its score is >= score_floor and its rotated IoU with every
/// previously kept detection is below iou_threshold.
inline std::vector<std::size_t> nms_boxes(std::span<const Obb> boxes,
                                          std::span<const double> scores,
                                          double iou_threshold,
                                          std::size_t max_keep = kUnbounded,
                                          double score_floor = 0.0) {
  if (boxes.size() != scores.size()) {
    throw ShapeError("nms: boxes and scores differ in length");
  }
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError("nms: iou_threshold outside [0, 1]");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("nms: non-finite score");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });

  std::vector<std::size_t> kept;
  std::vector<detail::BoxGeom> kept_geom;
  for (std::size_t idx : order) {
    if (kept.size() >= max_keep) break;
    if (scores[idx] < score_floor) break;  // descending order: rest are below too
    detail::BoxGeom g(boxes[idx]);
    bool suppressed = false;
    for (const auto& kg : kept_geom) {
      if (detail::cached_iou(kg, g) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(idx);
      kept_geom.push_back(std::move(g));
    }
  }
  return kept;
}

/// Greedy NMS over scored detections; see nms_boxes for the exact contract.
inline std::vector<std::size_t> nms(std::span<const ScoredDetection> dets,
                                    double iou_threshold,
                                    std::size_t max_keep = kUnbounded,
                                    double score_floor = 0.0) {
  std::vector<Obb> boxes;
  std::vector<double> scores;
  boxes.reserve(dets.size());
  scores.reserve(dets.size());
  for (const auto& d : dets) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  return nms_boxes(boxes, scores, iou_threshold, max_keep, score_floor);
}

/// Key RoIs surviving NMS, with their gathered feature rows.
struct KeySelection {
  std::vector<std::size_t> indices;
  std::vector<Obb> boxes;
  Eigen::MatrixXd features;
};

/// Filters RoIs with NMS (unbounded, no score floor) and gathers the
/// surviving rows of `features`. Key rows are exact copies of the selected
/// feature rows.
inline KeySelection filter_keys(std::span<const Obb> rois,
                                const Eigen::MatrixXd& features,
                                std::span<const double> scores,
                                double iou_threshold = 0.5) {
  if (static_cast<std::size_t>(features.rows()) != rois.size() ||
      rois.size() != scores.size()) {
    throw ShapeError("filter_keys: rois, features and scores must align by row");
  }
  KeySelection out;
  out.indices = nms_boxes(rois, scores, iou_threshold);
  out.boxes.reserve(out.indices.size());
  out.features.resize(static_cast<Eigen::Index>(out.indices.size()), features.cols());
  for (std::size_t r = 0; r < out.indices.size(); ++r) {
    out.boxes.push_back(rois[out.indices[r]]);
    out.features.row(static_cast<Eigen::Index>(r)) =
        features.row(static_cast<Eigen::Index>(out.indices[r]));
  }
  return out;
}

}  // namespace obbkit
