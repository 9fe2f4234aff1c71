// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each criterion prints exactly one [PASS]/[FAIL] line;
// the exit code is the number of failed criteria.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "obbkit/obbkit.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace obbkit;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void run_criterion(const std::string& name, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------

void constant_fidelity() {
  const PipelineConfig cfg;
  const bool pass = cfg.relation_t == 0.1 && cfg.min_extent == 56.0 &&
                    cfg.key_nms_iou == 0.5 && cfg.final_nms_iou == 0.1 &&
                    cfg.score_floor == 0.05 && cfg.max_boxes == 300 &&
                    cfg.icmm_stacks == 2;
  report("constant-fidelity", pass,
         format("t=%g min_extent=%g key_nms=%g final_nms=%g floor=%g max=%zu stacks=%d",
                cfg.relation_t, cfg.min_extent, cfg.key_nms_iou, cfg.final_nms_iou,
                cfg.score_floor, cfg.max_boxes, cfg.icmm_stacks));
}

// ---------------------------------------------------------------------------

FeatureMatrix compose_icmm(std::span<const Obb> rois, const FeatureMatrix& features,
                           std::span<const double> scores, const IcmmParams& params,
                           int stacks) {
  const KeySelection keys = filter_keys(rois, features, scores, 0.5);
  const Eigen::MatrixXd affinity = spatial_affinity(rois, keys.boxes, 56.0);
  const Eigen::MatrixXd adjacency = quantize(affinity, 0.1);
  const Eigen::MatrixXd normalized = normalize(adjacency);
  FeatureMatrix f = features;
  for (int s = 0; s < stacks; ++s) {
    const FeatureMatrix fq = f * params.query_proj;
    FeatureMatrix fk(static_cast<Eigen::Index>(keys.indices.size()), f.cols());
    for (std::size_t r = 0; r < keys.indices.size(); ++r) {
      fk.row(static_cast<Eigen::Index>(r)) =
          f.row(static_cast<Eigen::Index>(keys.indices[r]));
    }
    f = aggregate(normalized, fk * params.key_proj, fq);
  }
  return f;
}

void icmm_oracle_suite() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20260810);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double max_composition_diff = 0.0;
  double max_row_sum_err = 0.0;
  double max_perm_diff = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const Eigen::Index c = 2 + static_cast<Eigen::Index>(rng() % 15);
    std::vector<Obb> rois;
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
      rois.push_back({600.0 * u(rng), 600.0 * u(rng), 4.0 + 120.0 * u(rng),
                      4.0 + 120.0 * u(rng), (u(rng) - 0.5) * kPi});
      scores.push_back(u(rng));
    }
    const FeatureMatrix features =
        uniform_matrix(static_cast<Eigen::Index>(n), c, -2.0, 2.0, rng);
    const IcmmParams params = IcmmParams::random(c, 1000 + trial);
    const int stacks = 1 + static_cast<int>(rng() % 3);

    const FeatureMatrix got = icmm_forward(rois, features, scores, params, stacks);
    const FeatureMatrix want = compose_icmm(rois, features, scores, params, stacks);
    max_composition_diff =
        std::max(max_composition_diff, (got - want).array().abs().maxCoeff());

    // Row stochasticity of the normalized adjacency.
    const KeySelection keys = filter_keys(rois, features, scores, 0.5);
    const Eigen::MatrixXd normalized =
        normalize(quantize(spatial_affinity(rois, keys.boxes, 56.0), 0.1));
    for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
      const double sum = normalized.row(i).sum();
      max_row_sum_err = std::max(
          max_row_sum_err, sum == 0.0 ? 0.0 : std::abs(sum - 1.0));
    }

    // Key-permutation invariance.
    std::vector<std::size_t> shuffled = keys.indices;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const FeatureMatrix base = icmm_forward(rois, keys.indices, features, params, stacks);
    const FeatureMatrix permuted = icmm_forward(rois, shuffled, features, params, stacks);
    max_perm_diff =
        std::max(max_perm_diff, (base - permuted).array().abs().maxCoeff());

    // Query-permutation equivariance.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Obb> prois(n);
    std::vector<double> pscores(n);
    FeatureMatrix pfeatures(static_cast<Eigen::Index>(n), c);
    for (std::size_t i = 0; i < n; ++i) {
      prois[i] = rois[perm[i]];
      pscores[i] = scores[perm[i]];
      pfeatures.row(static_cast<Eigen::Index>(i)) =
          features.row(static_cast<Eigen::Index>(perm[i]));
    }
    const FeatureMatrix pout = icmm_forward(prois, pfeatures, pscores, params, stacks);
    for (std::size_t i = 0; i < n; ++i) {
      max_perm_diff = std::max(
          max_perm_diff, (pout.row(static_cast<Eigen::Index>(i)) -
                          got.row(static_cast<Eigen::Index>(perm[i])))
                             .array()
                             .abs()
                             .maxCoeff());
    }
  }
  const double elapsed = seconds_since(start);
  const bool pass = max_composition_diff < 1e-10 && max_row_sum_err <= 1e-12 &&
                    max_perm_diff <= 1e-12 && elapsed < 10.0;
  report("icmm-oracle-suite", pass,
         format("1000 instances: composition %.2e (<1e-10), row-sum %.2e (<=1e-12), "
                "permutation %.2e (<=1e-12), %.2f s (<10 s)",
                max_composition_diff, max_row_sum_err, max_perm_diff, elapsed));
}

// ---------------------------------------------------------------------------

void rotated_iou_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(47);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double max_mc_diff = 0.0;
  double max_sym_diff = 0.0;
  double max_rigid_diff = 0.0;
  for (int pair = 0; pair < 200; ++pair) {
    Obb a{40.0 * u(rng), 40.0 * u(rng), 2.0 + 30.0 * u(rng), 2.0 + 30.0 * u(rng),
          (u(rng) - 0.5) * kPi};
    Obb b = a;
    b.cx += (u(rng) - 0.5) * (a.w + 10.0);
    b.cy += (u(rng) - 0.5) * (a.h + 10.0);
    b.w = 2.0 + 30.0 * u(rng);
    b.h = 2.0 + 30.0 * u(rng);
    b.theta = (u(rng) - 0.5) * kPi;

    const double analytic = rotated_iou(a, b);
    const double sampled = oracles::mc_iou(a, b, 1'000'000, 10'000 + pair);
    max_mc_diff = std::max(max_mc_diff, std::abs(analytic - sampled));
    max_sym_diff = std::max(max_sym_diff, std::abs(analytic - rotated_iou(b, a)));

    const double tx = 200.0 * (u(rng) - 0.5);
    const double ty = 200.0 * (u(rng) - 0.5);
    const double phi = (u(rng) - 0.5) * 2.0 * kPi;
    const double c = std::cos(phi), s = std::sin(phi);
    auto moved = [&](const Obb& x) {
      return Obb{x.cx * c - x.cy * s + tx, x.cx * s + x.cy * c + ty, x.w, x.h,
                 x.theta + phi};
    };
    max_rigid_diff = std::max(
        max_rigid_diff, std::abs(rotated_iou(moved(a), moved(b)) - analytic));
  }
  const double elapsed = seconds_since(start);
  const bool pass = max_mc_diff < 3e-3 && max_sym_diff < 1e-6 &&
                    max_rigid_diff < 1e-6 && elapsed < 60.0;
  report("rotated-iou", pass,
         format("200 pairs vs 1e6-sample MC: max diff %.2e (<3e-3), symmetry %.2e, "
                "rigid motion %.2e (<1e-6), %.2f s (<60 s)",
                max_mc_diff, max_sym_diff, max_rigid_diff, elapsed));
}

// ---------------------------------------------------------------------------

void nms_equivalence() {
  Rng rng(53);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<Obb> boxes;
    std::vector<double> scores;
    const int clusters = 1 + static_cast<int>(rng() % 4);
    for (std::size_t i = 0; i < n; ++i) {
      const int cl = static_cast<int>(rng() % clusters);
      boxes.push_back({25.0 * cl + 6.0 * u(rng), 12.0 * cl + 6.0 * u(rng),
                       2.0 + 10.0 * u(rng), 2.0 + 10.0 * u(rng),
                       (u(rng) - 0.5) * kPi});
      scores.push_back(u(rng));
    }
    const double thr = 0.05 + 0.9 * u(rng);
    const std::size_t max_keep = (trial % 4 == 0) ? 1 + rng() % n : kUnbounded;
    const double floor = (trial % 3 == 0) ? 0.25 : 0.0;
    if (nms_boxes(boxes, scores, thr, max_keep, floor) !=
        oracles::brute_force_nms(boxes, scores, thr, max_keep, floor)) {
      ++mismatches;
    }
  }
  report("nms-equivalence", mismatches == 0,
         format("1000 random instances (N<=50): %d mismatches against the "
                "brute-force reference",
                mismatches));
}

// ---------------------------------------------------------------------------

void seg_loss_gradient() {
  Rng rng(59);
  const FeatureMap uniform_logits = FeatureMap::zeros(2, 3, 3, 8.0);
  Eigen::MatrixXi any_mask(3, 3);
  any_mask << 1, 0, 1, 0, 0, 1, 1, 0, 0;
  const double ln2_err =
      std::abs(seg_loss(uniform_logits, any_mask).loss - std::numbers::ln2);

  double max_rel_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    FeatureMap logits = FeatureMap::zeros(2, 3, 3, 8.0);
    for (auto& ch : logits.channels) ch = uniform_matrix(3, 3, -2.5, 2.5, rng);
    Eigen::MatrixXi mask(3, 3);
    for (Eigen::Index r = 0; r < 3; ++r) {
      for (Eigen::Index c = 0; c < 3; ++c) mask(r, c) = rng() % 2;
    }
    const SegLossResult res = seg_loss(logits, mask);
    const double eps = 1e-4;
    for (int ch = 0; ch < 2; ++ch) {
      for (Eigen::Index r = 0; r < 3; ++r) {
        for (Eigen::Index c = 0; c < 3; ++c) {
          FeatureMap plus = logits, minus = logits;
          plus.channels[ch](r, c) += eps;
          minus.channels[ch](r, c) -= eps;
          const double fd =
              (seg_loss(plus, mask).loss - seg_loss(minus, mask).loss) / (2.0 * eps);
          const double analytic = res.grad.channels[ch](r, c);
          const double scale = std::max({std::abs(fd), std::abs(analytic), 1e-3});
          max_rel_err = std::max(max_rel_err, std::abs(fd - analytic) / scale);
        }
      }
    }
  }
  const bool pass = max_rel_err < 1e-5 && ln2_err <= 1e-9;
  report("seg-loss-gradient", pass,
         format("100 instances: max relative gradient error %.2e (<1e-5), "
                "uniform-logit loss off ln 2 by %.2e (<=1e-9)",
                max_rel_err, ln2_err));
}

// ---------------------------------------------------------------------------

void ap_oracle() {
  const std::vector<std::uint8_t> fp_tp{0, 1};
  const std::vector<std::uint8_t> tp_tp_fp{1, 1, 0};
  const bool hand_ok =
      average_precision(fp_tp, 1) == 0.5 && average_precision(tp_tp_fp, 4) == 0.5;

  bool monotone_ok = true;
  Rng rng(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int scene_idx = 0; scene_idx < 100; ++scene_idx) {
    const SynthScene scene = make_synthetic_scene(
        {.images = 2, .boxes_per_image = 5,
         .seed = static_cast<std::uint64_t>(7000 + scene_idx),
         .noise = 0.05 + 0.25 * u(rng), .image_size = 640, .regions = 1});
    std::vector<EvalDetection> dets;
    std::vector<GroundTruthBox> gts;
    for (const auto& r : scene.detections) {
      dets.push_back({r.box, *r.score, r.image_id, r.region_id});
    }
    for (const auto& r : scene.ground_truth) {
      gts.push_back({r.box, r.image_id, r.region_id});
    }
    const double ap50 = evaluate(dets, gts, 0.5).overall_ap;
    const double ap75 = evaluate(dets, gts, 0.75).overall_ap;
    if (ap75 > ap50 + 1e-12) monotone_ok = false;
  }

  const SynthScene perfect = make_synthetic_scene(
      {.images = 3, .boxes_per_image = 6, .seed = 5, .noise = 0.0,
       .image_size = 640, .regions = 1});
  std::vector<EvalDetection> dets;
  std::vector<GroundTruthBox> gts;
  for (const auto& r : perfect.detections) {
    dets.push_back({r.box, *r.score, r.image_id, r.region_id});
  }
  for (const auto& r : perfect.ground_truth) {
    gts.push_back({r.box, r.image_id, r.region_id});
  }
  const bool perfect_ok = evaluate(dets, gts, 0.5).overall_ap == 1.0 &&
                          evaluate(dets, gts, 0.75).overall_ap == 1.0;

  report("ap-oracle", hand_ok && monotone_ok && perfect_ok,
         format("hand cases %s, AP75<=AP50 on 100 jittered scenes %s, perfect "
                "detections give exactly 1.0 %s",
                hand_ok ? "exact" : "WRONG", monotone_ok ? "hold" : "VIOLATED",
                perfect_ok ? "yes" : "NO"));
}

// ---------------------------------------------------------------------------

void end_to_end_smoke() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir =
      fs::temp_directory_path() / ("obbkit_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string gt = (dir / "gt.jsonl").string();
  const std::string dets = (dir / "dets.jsonl").string();
  const std::string finalized = (dir / "finalized.jsonl").string();
  const std::string csv = (dir / "ap.csv").string();
  const std::string cli = OBBKIT_CLI_PATH;

  const std::string synth_cmd =
      cli + " synth --images 100 --boxes-per-image 20 --seed 4242 --noise 0 --gt-out " +
      gt + " --dets-out " + dets;
  if (std::system(synth_cmd.c_str()) != 0) {
    report("end-to-end-smoke", false, "synth invocation failed");
    return;
  }

  // Cascade finalize per image: stage scores (1-s, s), fused with themselves.
  const std::vector<BoxRecord> det_records = read_jsonl(dets);
  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < det_records.size(); ++i) {
    by_image[det_records[i].image_id].push_back(i);
  }
  const PipelineConfig cfg;
  std::vector<BoxRecord> final_records;
  for (const auto& [image_id, indices] : by_image) {
    StageOutput stage;
    stage.scores.resize(static_cast<Eigen::Index>(indices.size()), 2);
    std::string region;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const BoxRecord& rec = det_records[indices[k]];
      stage.boxes.push_back(rec.box);
      stage.scores(static_cast<Eigen::Index>(k), 0) = 1.0 - *rec.score;
      stage.scores(static_cast<Eigen::Index>(k), 1) = *rec.score;
      region = rec.region_id;
    }
    validate_stage_output(stage);
    const Eigen::MatrixXd fused = fuse_scores(stage.scores, stage.scores);
    for (const ScoredDetection& det : finalize(stage, fused, cfg, image_id)) {
      final_records.push_back({det.image_id, region, det.box, det.score, {}, 0});
    }
  }
  write_jsonl(finalized, final_records);

  const std::string eval_cmd = cli + " eval --dets " + finalized + " --gt " + gt +
                               " --iou 0.5,0.75 --out " + csv;
  if (std::system(eval_cmd.c_str()) != 0) {
    report("end-to-end-smoke", false, "eval invocation failed");
    return;
  }
  std::ifstream in(csv);
  std::string header, overall;
  std::getline(in, header);
  std::getline(in, overall);
  const double elapsed = seconds_since(start);
  const bool pass =
      overall == "overall,1.000000,1.000000" && elapsed < 10.0;
  report("end-to-end-smoke", pass,
         format("100 images x 20 boxes: eval row '%s' (want overall,1.000000,1.000000), "
                "%.2f s (<10 s)",
                overall.c_str(), elapsed));
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------

void performance() {
  Rng rng(67);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Rotated NMS over the proposal count: 2000 scored boxes in < 1 s.
  std::vector<Obb> boxes;
  std::vector<double> scores;
  for (int i = 0; i < 2000; ++i) {
    boxes.push_back({800.0 * u(rng), 800.0 * u(rng), 8.0 + 70.0 * u(rng),
                     8.0 + 70.0 * u(rng), (u(rng) - 0.5) * kPi});
    scores.push_back(u(rng));
  }
  // Unbounded run: every candidate is processed, nothing early-exits.
  const auto nms_start = std::chrono::steady_clock::now();
  const auto kept = nms_boxes(boxes, scores, 0.1);
  const double nms_elapsed = seconds_since(nms_start);

  // Dense ICMM: N=2000 RoIs on a disjoint grid (nothing suppressed), C=1024.
  std::vector<Obb> rois;
  std::vector<double> roi_scores;
  for (int i = 0; i < 2000; ++i) {
    const double cx = 100.0 * static_cast<double>(i % 45) + 30.0;
    const double cy = 100.0 * static_cast<double>(i / 45) + 30.0;
    rois.push_back({cx, cy, 40.0 + 20.0 * u(rng), 40.0 + 20.0 * u(rng),
                    (u(rng) - 0.5) * kPi});
    roi_scores.push_back(u(rng));
  }
  const FeatureMatrix features = uniform_matrix(2000, 1024, -1.0, 1.0, rng);
  const IcmmParams params = IcmmParams::random(1024, 404);
  const auto icmm_start = std::chrono::steady_clock::now();
  const FeatureMatrix context = icmm_forward(rois, features, roi_scores, params, 2);
  const Eigen::MatrixXd cls = classify(context, params);
  const double icmm_elapsed = seconds_since(icmm_start);

  const bool pass = nms_elapsed < 1.0 && icmm_elapsed < 5.0 && !kept.empty() &&
                    cls.rows() == 2000;
  report("performance", pass,
         format("NMS over 2000 boxes: %.3f s (<1 s, kept %zu); ICMM N=2000 C=1024 "
                "2 stacks + head: %.2f s (<5 s)",
                nms_elapsed, kept.size(), icmm_elapsed));
}

// ---------------------------------------------------------------------------

void min_rect_vs_sweep() {
  Rng rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_excess = -1e300;
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec2> pts;
    const int n = 3 + static_cast<int>(rng() % 22);
    for (int k = 0; k < n; ++k) {
      pts.push_back({100.0 * u(rng), 100.0 * u(rng)});
    }
    Obb rect;
    try {
      rect = min_area_rect(pts);
    } catch (const DegenerateInputError&) {
      continue;
    }
    const oracles::SweepRect sweep = oracles::sweep_min_rect(pts);
    const double excess = rect.area() - sweep.area;
    worst_excess = std::max(worst_excess, excess);
    if (excess > 1e-6) ++violations;
  }

  // Rectangles rotated by a grid angle: the sweep hits the optimum exactly,
  // so the areas must agree.
  double worst_grid_diff = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double angle = 0.001 * static_cast<double>(rng() % 1570);
    const Obb box{50.0 * u(rng), 50.0 * u(rng), 5.0 + 40.0 * u(rng),
                  5.0 + 40.0 * u(rng), angle};
    const std::vector<Vec2> pts = corners(box).vertices;
    const Obb rect = min_area_rect(pts);
    const oracles::SweepRect sweep = oracles::sweep_min_rect(pts);
    worst_grid_diff = std::max(worst_grid_diff, std::abs(rect.area() - sweep.area));
  }
  const bool pass = violations == 0 && worst_grid_diff < 1e-6;
  report("min-rect", pass,
         format("200 random polygons: calipers area <= sweep + 1e-6 (%d violations, "
                "worst excess %.2e); on-grid equality within %.2e (<1e-6)",
                violations, worst_excess, worst_grid_diff));
}

}  // namespace

int main() {
  run_criterion("constant-fidelity", constant_fidelity);
  run_criterion("icmm-oracle-suite", icmm_oracle_suite);
  run_criterion("rotated-iou", rotated_iou_oracle);
  run_criterion("nms-equivalence", nms_equivalence);
  run_criterion("seg-loss-gradient", seg_loss_gradient);
  run_criterion("ap-oracle", ap_oracle);
  run_criterion("end-to-end-smoke", end_to_end_smoke);
  run_criterion("performance", performance);
  run_criterion("min-rect", min_rect_vs_sweep);
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
  } else {
    std::printf("%d acceptance criteria FAILED\n", g_failures);
  }
  return g_failures;
}
