// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/nms.hpp"
#include "obbkit/relation_graph.hpp"

namespace obbkit {

/// Boxes plus per-box two-class scores of one cascade stage.
struct StageOutput {
  std::vector<Obb> boxes;
  Eigen::MatrixXd scores;  // N x 2, rows sum to 1
};

/// Inference-side constants of the cascade pipeline.
struct PipelineConfig {
  double final_nms_iou = 0.1;
  double score_floor = 0.05;
  std::size_t max_boxes = 300;
  double key_nms_iou = 0.5;
  int icmm_stacks = 2;
  double relation_t = 0.1;
  double min_extent = 56.0;
};

inline void validate_config(const PipelineConfig& cfg) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(cfg.final_nms_iou) || !in_unit(cfg.score_floor) ||
      !in_unit(cfg.key_nms_iou) || !in_unit(cfg.relation_t)) {
    throw ValidationError("pipeline config: thresholds must lie in [0, 1]");
  }
  if (cfg.max_boxes < 1 || cfg.icmm_stacks < 1) {
    throw ValidationError("pipeline config: counts must be >= 1");
  }
  if (!(cfg.min_extent >= 0.0)) {
    throw ValidationError("pipeline config: min_extent must be >= 0");
  }
}

/// Reads a config from a JSON object whose keys mirror the field names.
/// Unknown keys are rejected to catch typos.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "final_nms_iou") {
      cfg.final_nms_iou = value.get<double>();
    } else if (key == "score_floor") {
      cfg.score_floor = value.get<double>();
    } else if (key == "max_boxes") {
      cfg.max_boxes = value.get<std::size_t>();
    } else if (key == "key_nms_iou") {
      cfg.key_nms_iou = value.get<double>();
    } else if (key == "icmm_stacks") {
      cfg.icmm_stacks = value.get<int>();
    } else if (key == "relation_t") {
      cfg.relation_t = value.get<double>();
    } else if (key == "min_extent") {
      cfg.min_extent = value.get<double>();
    } else {
      throw ValidationError("pipeline config: unknown key '" + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, 1, e.what());
  }
  return pipeline_config_from_json(j);
}

inline void validate_stage_output(const StageOutput& stage) {
  if (static_cast<std::size_t>(stage.scores.rows()) != stage.boxes.size() ||
      (stage.scores.rows() > 0 && stage.scores.cols() != 2)) {
    throw ShapeError("stage output: box count must equal score rows (N x 2)");
  }
  for (Eigen::Index i = 0; i < stage.scores.rows(); ++i) {
    if (std::abs(stage.scores.row(i).sum() - 1.0) > 1e-6) {
      throw ValidationError("stage output: score rows must sum to 1");
    }
  }
}

/// Elementwise mean of the two stages' score matrices. Rows aligned by RoI
/// identity stay stochastic.
inline Eigen::MatrixXd fuse_scores(const Eigen::MatrixXd& stage1,
                                   const Eigen::MatrixXd& stage2) {
  if (stage1.rows() != stage2.rows() || stage1.cols() != stage2.cols()) {
    throw ShapeError("fuse_scores: score shapes differ");
  }
  return 0.5 * (stage1 + stage2);
}

/// Final post-processing: score floor, rotated NMS, box cap. The building
/// score is column 1 of the fused scores; the floor applies before NMS.
/// Output is sorted by descending score.
inline std::vector<ScoredDetection> finalize(const StageOutput& stage,
                                             const Eigen::MatrixXd& fused_scores,
                                             const PipelineConfig& cfg,
                                             std::string image_id = {}) {
  validate_config(cfg);
  if (static_cast<std::size_t>(fused_scores.rows()) != stage.boxes.size() ||
      (fused_scores.rows() > 0 && fused_scores.cols() != 2)) {
    throw ShapeError("finalize: fused scores must be N x 2 aligned with boxes");
  }
  std::vector<double> building(stage.boxes.size());
  for (std::size_t i = 0; i < building.size(); ++i) {
    building[i] = fused_scores(static_cast<Eigen::Index>(i), 1);
  }
  const std::vector<std::size_t> kept = nms_boxes(
      stage.boxes, building, cfg.final_nms_iou, cfg.max_boxes, cfg.score_floor);
  std::vector<ScoredDetection> out;
  out.reserve(kept.size());
  for (std::size_t idx : kept) {
    out.push_back({stage.boxes[idx], building[idx], image_id, 1});
  }
  return out;
}

/// Inference over one image's RoIs: ICMM-enhanced classification (stage 2),
/// score averaging with stage 1, then finalize. Box regression is not
/// modeled; boxes pass through unchanged.
inline std::vector<ScoredDetection> run_cascade(std::span<const Obb> rois,
                                                const FeatureMatrix& roi_features,
                                                const Eigen::MatrixXd& stage1_scores,
                                                const IcmmParams& params,
                                                const PipelineConfig& cfg,
                                                std::string image_id = {}) {
  validate_config(cfg);
  if (rois.empty()) return {};
  if (static_cast<std::size_t>(stage1_scores.rows()) != rois.size() ||
      stage1_scores.cols() != 2) {
    throw ShapeError("run_cascade: stage1 scores must be N x 2");
  }
  std::vector<double> s1_building(rois.size());
  for (std::size_t i = 0; i < rois.size(); ++i) {
    s1_building[i] = stage1_scores(static_cast<Eigen::Index>(i), 1);
  }
  const FeatureMatrix context =
      icmm_forward(rois, roi_features, s1_building, params, cfg.icmm_stacks,
                   cfg.relation_t, cfg.min_extent, cfg.key_nms_iou);
  const Eigen::MatrixXd stage2_scores = classify(context, params);
  const Eigen::MatrixXd fused = fuse_scores(stage1_scores, stage2_scores);
  StageOutput stage2{std::vector<Obb>(rois.begin(), rois.end()), stage2_scores};
  return finalize(stage2, fused, cfg, std::move(image_id));
}

/// The detector's seven training loss terms with unit weights; training
/// itself is out of scope, this is bookkeeping only.
struct LossTerms {
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double seg = 0.0;
  double head1_cls = 0.0;
  double head1_reg = 0.0;
  double head2_cls = 0.0;
  double head2_reg = 0.0;
};

inline double total_loss(const LossTerms& t) {
  return t.rpn_cls + t.rpn_reg + t.seg + t.head1_cls + t.head1_reg + t.head2_cls +
         t.head2_reg;
}

}  // namespace obbkit
