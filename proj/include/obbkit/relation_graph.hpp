// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/nms.hpp"
#include "obbkit/random.hpp"

namespace obbkit {

/// Dense RoI feature matrix: one row per RoI, one column per channel.
using FeatureMatrix = Eigen::MatrixXd;

inline constexpr double kDefaultRelationThreshold = 0.1;
inline constexpr double kDefaultMinExtent = 56.0;
inline constexpr int kDefaultIcmmStacks = 2;

/// Spatial relation graph between query and key RoIs.
struct RelationGraph {
  Eigen::MatrixXd affinity;    // S, entries in (0, 1]
  Eigen::MatrixXd adjacency;   // A, binary 0/1
  Eigen::MatrixXd normalized;  // A_hat = D^-1 A; zero rows where degree is 0
  double threshold = kDefaultRelationThreshold;
};

/// Linear maps for the query/key branches plus the two-layer classification
/// head. All stacks share one set of weights.
struct IcmmParams {
  Eigen::MatrixXd query_proj;  // C x C
  Eigen::MatrixXd key_proj;    // C x C
  Eigen::MatrixXd head_w1;     // C x C
  Eigen::VectorXd head_b1;     // C
  Eigen::MatrixXd head_w2;     // C x 2
  Eigen::VectorXd head_b2;     // 2

  Eigen::Index channels() const { return query_proj.rows(); }

  /// Seeded initialization, entries uniform in [-1/sqrt(C), 1/sqrt(C)].
  static IcmmParams random(Eigen::Index channels, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    IcmmParams p;
    p.query_proj = uniform_matrix(channels, channels, -bound, bound, rng);
    p.key_proj = uniform_matrix(channels, channels, -bound, bound, rng);
    p.head_w1 = uniform_matrix(channels, channels, -bound, bound, rng);
    p.head_b1 = uniform_vector(channels, -bound, bound, rng);
    p.head_w2 = uniform_matrix(channels, 2, -bound, bound, rng);
    p.head_b2 = uniform_vector(2, -bound, bound, rng);
    return p;
  }
};

/// S[i][j] = exp(-||Delta|| / 2) with
/// Delta = ((xq - xk) / max(wq, min_extent), (yq - yk) / max(hq, min_extent)).
/// The normalizers use the query box extents only; small queries are clamped
/// to min_extent so their distances stay comparable.
inline Eigen::MatrixXd spatial_affinity(std::span<const Obb> queries,
                                        std::span<const Obb> keys,
                                        double min_extent = kDefaultMinExtent) {
  Eigen::MatrixXd affinity(static_cast<Eigen::Index>(queries.size()),
                           static_cast<Eigen::Index>(keys.size()));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Obb& q = queries[i];
    const double wq = std::max(q.w, min_extent);
    const double hq = std::max(q.h, min_extent);
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const double dx = (q.cx - keys[j].cx) / wq;
      const double dy = (q.cy - keys[j].cy) / hq;
      affinity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::exp(-0.5 * std::hypot(dx, dy));
    }
  }
  return affinity;
}

/// A[i][j] = 1 iff S[i][j] >= t (boundary inclusive).
inline Eigen::MatrixXd quantize(const Eigen::MatrixXd& affinity,
                                double t = kDefaultRelationThreshold) {
  return (affinity.array() >= t).cast<double>();
}

/// Row-normalizes a binary adjacency by its degree. Rows with zero degree map
/// to all-zero rows, so aggregation falls back to the query feature alone.
inline Eigen::MatrixXd normalize(const Eigen::MatrixXd& adjacency) {
  Eigen::MatrixXd out = adjacency;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double degree = out.row(i).sum();
    if (degree > 0.0) out.row(i) /= degree;
  }
  return out;
}

inline RelationGraph build_relation_graph(std::span<const Obb> queries,
                                          std::span<const Obb> keys,
                                          double threshold = kDefaultRelationThreshold,
                                          double min_extent = kDefaultMinExtent) {
  RelationGraph g;
  g.affinity = spatial_affinity(queries, keys, min_extent);
  g.adjacency = quantize(g.affinity, threshold);
  g.normalized = normalize(g.adjacency);
  g.threshold = threshold;
  return g;
}

/// F' = ReLU(A_hat * F_key + F_query); the residual query term preserves the
/// original semantics where a query has no neighbors.
inline FeatureMatrix aggregate(const Eigen::MatrixXd& normalized_adjacency,
                               const FeatureMatrix& key_features,
                               const FeatureMatrix& query_features) {
  if (normalized_adjacency.rows() != query_features.rows() ||
      normalized_adjacency.cols() != key_features.rows() ||
      key_features.cols() != query_features.cols()) {
    throw ShapeError("aggregate: incompatible matrix shapes");
  }
  return ((normalized_adjacency * key_features + query_features).array().max(0.0))
      .matrix();
}

/// Stacked ICMM forward pass. Queries are all RoIs; keys are
/// rois[key_indices]. The spatial graph depends only on the boxes, which stay
/// fixed across stacks, so it is built once; features are re-projected and
/// re-gathered every stack. When graph_out is non-null the graph is copied
/// there for inspection.
inline FeatureMatrix icmm_forward(std::span<const Obb> rois,
                                  std::span<const std::size_t> key_indices,
                                  const FeatureMatrix& features,
                                  const IcmmParams& params,
                                  int stacks = kDefaultIcmmStacks,
                                  double threshold = kDefaultRelationThreshold,
                                  double min_extent = kDefaultMinExtent,
                                  RelationGraph* graph_out = nullptr) {
  if (stacks < 1) throw ValidationError("icmm_forward: stacks must be >= 1");
  if (static_cast<std::size_t>(features.rows()) != rois.size()) {
    throw ShapeError("icmm_forward: feature rows must match RoI count");
  }
  if (features.cols() != params.channels() && !rois.empty()) {
    throw ShapeError("icmm_forward: feature channels do not match params");
  }
  if (rois.empty()) return FeatureMatrix(0, features.cols());

  std::vector<Obb> key_boxes;
  std::vector<Eigen::Index> gather;
  key_boxes.reserve(key_indices.size());
  gather.reserve(key_indices.size());
  for (std::size_t idx : key_indices) {
    if (idx >= rois.size()) throw ValidationError("icmm_forward: key index out of range");
    key_boxes.push_back(rois[idx]);
    gather.push_back(static_cast<Eigen::Index>(idx));
  }

  RelationGraph graph = build_relation_graph(rois, key_boxes, threshold, min_extent);
  FeatureMatrix f = features;
  for (int s = 0; s < stacks; ++s) {
    const FeatureMatrix query_features = f * params.query_proj;
    const FeatureMatrix key_features = f(gather, Eigen::all) * params.key_proj;
    f = aggregate(graph.normalized, key_features, query_features);
  }
  if (graph_out) *graph_out = std::move(graph);
  return f;
}

/// Convenience overload: keys are selected by NMS over the supplied scores.
inline FeatureMatrix icmm_forward(std::span<const Obb> rois,
                                  const FeatureMatrix& features,
                                  std::span<const double> scores,
                                  const IcmmParams& params,
                                  int stacks = kDefaultIcmmStacks,
                                  double threshold = kDefaultRelationThreshold,
                                  double min_extent = kDefaultMinExtent,
                                  double key_nms_iou = 0.5,
                                  RelationGraph* graph_out = nullptr) {
  const KeySelection keys = filter_keys(rois, features, scores, key_nms_iou);
  return icmm_forward(rois, keys.indices, features, params, stacks, threshold,
                      min_extent, graph_out);
}

/// Two-layer classification head: softmax(ReLU(F' W1 + b1) W2 + b2).
/// Row layout: column 0 = background, column 1 = building; rows sum to 1.
inline Eigen::MatrixXd classify(const FeatureMatrix& features, const IcmmParams& params) {
  if (features.cols() != params.head_w1.rows()) {
    throw ShapeError("classify: feature channels do not match head");
  }
  Eigen::MatrixXd hidden =
      ((features * params.head_w1).rowwise() + params.head_b1.transpose())
          .cwiseMax(0.0);
  Eigen::MatrixXd logits =
      (hidden * params.head_w2).rowwise() + params.head_b2.transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    logits.row(i) = (e / e.sum()).matrix();
  }
  return logits;
}

}  // namespace obbkit
