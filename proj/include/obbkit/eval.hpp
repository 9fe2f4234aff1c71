// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/nms.hpp"

namespace obbkit {

/// One ground-truth box with its image and region (province/area) labels.
struct GroundTruthBox {
  Obb box;
  std::string image_id;
  std::string region_id;
};

/// One detection as consumed by the evaluator.
struct EvalDetection {
  Obb box;
  double score = 0.0;
  std::string image_id;
  std::string region_id;
};

/// Greedy matching result for one image. Vectors are aligned with the input
/// detection order.
struct MatchResult {
  std::vector<std::uint8_t> detection_is_tp;
  std::vector<int> matched_gt;  // GT index per detection, -1 for FP
  std::vector<std::uint8_t> gt_matched;
};

/// VOC-style greedy matching: detections in descending score order each claim
/// the highest-IoU unmatched GT with IoU >= iou_thresh (GT ties break toward
/// the lower index); at most one detection per GT.
inline MatchResult match_detections(std::span<const ScoredDetection> dets,
                                    std::span<const GroundTruthBox> gts,
                                    double iou_thresh) {
  MatchResult result;
  result.detection_is_tp.assign(dets.size(), 0);
  result.matched_gt.assign(dets.size(), -1);
  result.gt_matched.assign(gts.size(), 0);

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b);
  });

  for (std::size_t det_idx : order) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (result.gt_matched[g]) continue;
      const double iou = rotated_iou(dets[det_idx].box, gts[g].box);
      if (iou >= iou_thresh && iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      result.detection_is_tp[det_idx] = 1;
      result.matched_gt[det_idx] = best_gt;
      result.gt_matched[static_cast<std::size_t>(best_gt)] = 1;
    }
  }
  return result;
}

/// All-points interpolated average precision (VOC2012). `tp_flags` must be
/// ordered by descending detection score. With no ground truth the AP is 0.
inline double average_precision(std::span<const std::uint8_t> tp_flags,
                                std::size_t num_gt) {
  if (num_gt == 0 || tp_flags.empty()) return 0.0;
  const std::size_t n = tp_flags.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_flags[i] ? 1.0 : 0.0;
    recall[i] = tp / static_cast<double>(num_gt);
    precision[i] = tp / static_cast<double>(i + 1);
  }
  // Make the precision envelope non-increasing, then sum area under the
  // stepwise curve over the recall increments.
  for (std::size_t i = n - 1; i-- > 0;) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Per-region and overall AP plus the pooled PR curve.
struct EvalResult {
  std::map<std::string, double> per_region_ap;
  double overall_ap = 0.0;
  double macro_average_ap = 0.0;  // mean of the per-region APs
  std::vector<std::pair<double, double>> pr_curve;  // (recall, precision), pooled
};

/// Evaluates pooled AP at one IoU threshold. The overall AP pools all
/// detections; per-region APs (when group_by_region is set) pool within each
/// region. Detections referencing a region absent from the ground truth, or
/// disagreeing with it about an image's region, raise ValidationError.
inline EvalResult evaluate(std::span<const EvalDetection> dets,
                           std::span<const GroundTruthBox> gts, double iou_thresh,
                           bool group_by_region = false) {
  std::unordered_map<std::string, std::string> image_region;
  std::map<std::string, std::size_t> region_gt_count;
  for (const auto& gt : gts) {
    auto [it, inserted] = image_region.emplace(gt.image_id, gt.region_id);
    if (!inserted && it->second != gt.region_id) {
      throw ValidationError("evaluate: image '" + gt.image_id +
                            "' appears in multiple regions");
    }
    ++region_gt_count[gt.region_id];
  }
  for (const auto& det : dets) {
    if (!region_gt_count.count(det.region_id)) {
      throw ValidationError("evaluate: detection references unknown region '" +
                            det.region_id + "'");
    }
    auto it = image_region.find(det.image_id);
    if (it != image_region.end() && it->second != det.region_id) {
      throw ValidationError("evaluate: detection region disagrees with ground truth "
                            "for image '" + det.image_id + "'");
    }
  }

  // Group by image and run the greedy matcher per image.
  std::unordered_map<std::string, std::vector<std::size_t>> dets_by_image;
  std::unordered_map<std::string, std::vector<std::size_t>> gts_by_image;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    dets_by_image[dets[i].image_id].push_back(i);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    gts_by_image[gts[g].image_id].push_back(g);
  }
  std::vector<std::uint8_t> is_tp(dets.size(), 0);
  for (const auto& [image_id, det_indices] : dets_by_image) {
    std::vector<ScoredDetection> image_dets;
    image_dets.reserve(det_indices.size());
    for (std::size_t i : det_indices) {
      image_dets.push_back({dets[i].box, dets[i].score, dets[i].image_id, 1});
    }
    std::vector<GroundTruthBox> image_gts;
    if (auto it = gts_by_image.find(image_id); it != gts_by_image.end()) {
      for (std::size_t g : it->second) image_gts.push_back(gts[g]);
    }
    const MatchResult match = match_detections(image_dets, image_gts, iou_thresh);
    for (std::size_t k = 0; k < det_indices.size(); ++k) {
      is_tp[det_indices[k]] = match.detection_is_tp[k];
    }
  }

  // Pool detections in descending score order (stable on input order).
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });

  EvalResult result;
  std::vector<std::uint8_t> pooled;
  pooled.reserve(dets.size());
  for (std::size_t i : order) pooled.push_back(is_tp[i]);
  result.overall_ap = average_precision(pooled, gts.size());

  double tp = 0.0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    tp += pooled[i] ? 1.0 : 0.0;
    const double recall = gts.empty() ? 0.0 : tp / static_cast<double>(gts.size());
    result.pr_curve.emplace_back(recall, tp / static_cast<double>(i + 1));
  }

  if (group_by_region) {
    for (const auto& [region, gt_count] : region_gt_count) {
      std::vector<std::uint8_t> region_flags;
      for (std::size_t i : order) {
        if (dets[i].region_id == region) region_flags.push_back(is_tp[i]);
      }
      result.per_region_ap[region] = average_precision(region_flags, gt_count);
    }
    double sum = 0.0;
    for (const auto& [region, ap] : result.per_region_ap) sum += ap;
    result.macro_average_ap =
        result.per_region_ap.empty()
            ? 0.0
            : sum / static_cast<double>(result.per_region_ap.size());
  } else {
    result.macro_average_ap = result.overall_ap;
  }
  return result;
}

}  // namespace obbkit
