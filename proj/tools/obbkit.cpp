// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0
//
// obbkit command-line tool: batch NMS, relation-graph dumps, synthetic
// scenes, dataset ingestion/statistics, pseudo-mask rendering and rotated-AP
// evaluation over JSONL box files.

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "obbkit/obbkit.hpp"

namespace {

using namespace obbkit;

// Scores and AP values print with exactly six decimals; matrix dumps use the
// shortest representation that parses back to the identical double.
std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string full_precision(double v) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, result.ptr);
}

unsigned default_threads() {
  if (const char* env = std::getenv("OBBKIT_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed >= 1) return static_cast<unsigned>(parsed);
  }
  return 1;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open file for writing: " + path);
  return out;
}

std::vector<double> parse_iou_list(const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("invalid IoU threshold: '" + item + "'");
    }
    if (out.back() < 0.0 || out.back() > 1.0) {
      throw ValidationError("IoU threshold outside [0, 1]: '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("no IoU thresholds given");
  return out;
}

std::string ap_column_name(double thr) {
  return "ap" + std::to_string(static_cast<int>(std::lround(thr * 100.0)));
}

void require_scores(const std::vector<BoxRecord>& records, const std::string& file) {
  for (const auto& rec : records) {
    if (!rec.score) {
      throw ParseError(file, rec.source_line, "detection record missing 'score'");
    }
  }
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out = open_output(path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << full_precision(m(r, c));
    }
    out << '\n';
  }
}

void write_pgm(const std::string& path, const Eigen::MatrixXi& mask) {
  std::ofstream out = open_output(path);
  out << "P5\n" << mask.cols() << ' ' << mask.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      out.put(mask(r, c) ? static_cast<char>(255) : static_cast<char>(0));
    }
  }
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string dets_path;
  std::string gt_path;
  std::string iou_spec = "0.5,0.75";
  bool per_region = false;
  std::string out_path;
  std::string pr_out_path;
  unsigned threads = default_threads();
};

int cmd_eval(const EvalOptions& opt) {
  const std::vector<double> thresholds = parse_iou_list(opt.iou_spec);
  const std::vector<BoxRecord> det_records = read_jsonl(opt.dets_path);
  const std::vector<BoxRecord> gt_records = read_jsonl(opt.gt_path);
  require_scores(det_records, opt.dets_path);

  std::vector<EvalDetection> dets;
  dets.reserve(det_records.size());
  for (const auto& r : det_records) {
    dets.push_back({r.box, *r.score, r.image_id, r.region_id});
  }
  std::vector<GroundTruthBox> gts;
  gts.reserve(gt_records.size());
  for (const auto& r : gt_records) gts.push_back({r.box, r.image_id, r.region_id});

  std::vector<EvalResult> results(thresholds.size());
  parallel_for(thresholds.size(), opt.threads, [&](std::size_t i) {
    results[i] = evaluate(dets, gts, thresholds[i], opt.per_region);
  });

  std::ostringstream csv;
  csv << "region";
  for (double thr : thresholds) csv << ',' << ap_column_name(thr);
  csv << '\n';
  if (opt.per_region) {
    for (const auto& [region, ap] : results[0].per_region_ap) {
      csv << region;
      for (const auto& res : results) csv << ',' << fixed6(res.per_region_ap.at(region));
      csv << '\n';
    }
  }
  csv << "overall";
  for (const auto& res : results) csv << ',' << fixed6(res.overall_ap);
  csv << '\n';
  if (opt.per_region) {
    csv << "macro_average";
    for (const auto& res : results) csv << ',' << fixed6(res.macro_average_ap);
    csv << '\n';
  }
  if (opt.out_path.empty()) {
    std::cout << csv.str();
  } else {
    open_output(opt.out_path) << csv.str();
  }
  if (!opt.pr_out_path.empty()) {
    std::ofstream pr = open_output(opt.pr_out_path);
    pr << "iou,recall,precision\n";
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      for (const auto& [recall, precision] : results[i].pr_curve) {
        pr << fixed6(thresholds[i]) << ',' << fixed6(recall) << ','
           << fixed6(precision) << '\n';
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// nms

struct NmsOptions {
  std::string in_path;
  std::string out_path;
  std::string config_path;
  double iou = PipelineConfig{}.final_nms_iou;
  double floor = PipelineConfig{}.score_floor;
  std::size_t max_keep = PipelineConfig{}.max_boxes;
  unsigned threads = default_threads();
};

int cmd_nms(const NmsOptions& opt) {
  if (opt.iou < 0.0 || opt.iou > 1.0) {
    throw ValidationError("--iou must lie in [0, 1]");
  }
  const std::vector<BoxRecord> records = read_jsonl(opt.in_path);
  require_scores(records, opt.in_path);

  // Per-image work items; output restored to image-id order.
  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_image[records[i].image_id].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> images;
  images.reserve(by_image.size());
  for (const auto& [id, indices] : by_image) images.push_back(&indices);

  std::vector<std::vector<std::size_t>> kept(images.size());
  parallel_for(images.size(), opt.threads, [&](std::size_t i) {
    const auto& indices = *images[i];
    std::vector<Obb> boxes;
    std::vector<double> scores;
    boxes.reserve(indices.size());
    scores.reserve(indices.size());
    for (std::size_t idx : indices) {
      boxes.push_back(records[idx].box);
      scores.push_back(*records[idx].score);
    }
    kept[i] = nms_boxes(boxes, scores, opt.iou, opt.max_keep, opt.floor);
  });

  std::vector<BoxRecord> out_records;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t local : kept[i]) {
      out_records.push_back(records[(*images[i])[local]]);
    }
  }
  if (opt.out_path.empty()) {
    write_jsonl(std::cout, out_records);
  } else {
    write_jsonl(opt.out_path, out_records);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// graph

struct GraphOptions {
  std::string rois_path;
  std::string features_path;
  std::string weights_path;
  std::string out_dir;
  std::string config_path;
  int stacks = PipelineConfig{}.icmm_stacks;
  double t = PipelineConfig{}.relation_t;
  double min_extent = PipelineConfig{}.min_extent;
  double key_iou = PipelineConfig{}.key_nms_iou;
  std::uint64_t seed = 42;
  bool binary = false;
};

int cmd_graph(const GraphOptions& opt) {
  const std::vector<BoxRecord> records = read_jsonl(opt.rois_path);
  std::vector<Obb> rois;
  std::vector<double> scores;
  rois.reserve(records.size());
  for (const auto& r : records) {
    rois.push_back(r.box);
    scores.push_back(r.score.value_or(1.0));
  }
  const TensorMap tensors = load_tensors(opt.features_path);
  const auto it = tensors.find("features");
  if (it == tensors.end()) {
    throw ValidationError("features file has no tensor named 'features'");
  }
  const FeatureMatrix& features = it->second;
  if (static_cast<std::size_t>(features.rows()) != rois.size()) {
    throw ShapeError("feature rows (" + std::to_string(features.rows()) +
                     ") do not match RoI count (" + std::to_string(rois.size()) + ")");
  }
  const IcmmParams params =
      opt.weights_path.empty()
          ? IcmmParams::random(features.cols(), opt.seed)
          : load_icmm_params(opt.weights_path);

  const KeySelection keys = filter_keys(rois, features, scores, opt.key_iou);
  RelationGraph graph;
  const FeatureMatrix context = icmm_forward(rois, keys.indices, features, params,
                                             opt.stacks, opt.t, opt.min_extent, &graph);

  std::filesystem::create_directories(opt.out_dir);
  const std::filesystem::path dir(opt.out_dir);
  write_matrix_csv((dir / "spatial_affinity.csv").string(), graph.affinity);
  write_matrix_csv((dir / "adjacency.csv").string(), graph.adjacency);
  write_matrix_csv((dir / "adjacency_normalized.csv").string(), graph.normalized);
  write_matrix_csv((dir / "context_features.csv").string(), context);
  {
    std::ofstream out = open_output((dir / "key_indices.csv").string());
    for (std::size_t i = 0; i < keys.indices.size(); ++i) {
      out << keys.indices[i] << '\n';
    }
  }
  if (opt.binary) {
    TensorMap dump;
    dump["spatial_affinity"] = graph.affinity;
    dump["adjacency"] = graph.adjacency;
    dump["adjacency_normalized"] = graph.normalized;
    dump["context_features"] = context;
    save_tensors((dir / "graph.bin").string(), (dir / "graph.json").string(), dump);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  SynthConfig cfg;
  std::string gt_path;
  std::string dets_path;
  std::string manifest_path;
};

int cmd_synth(const SynthOptions& opt) {
  const SynthScene scene = make_synthetic_scene(opt.cfg);
  write_jsonl(opt.gt_path, scene.ground_truth);
  write_jsonl(opt.dets_path, scene.detections);
  if (opt.manifest_path.empty()) return 0;

  // Per-image match manifest at the two evaluation thresholds, computed with
  // the library matcher; tests check it against the brute-force reference.
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
      by_image;
  for (std::size_t i = 0; i < scene.detections.size(); ++i) {
    by_image[scene.detections[i].image_id].first.push_back(i);
  }
  for (std::size_t g = 0; g < scene.ground_truth.size(); ++g) {
    by_image[scene.ground_truth[g].image_id].second.push_back(g);
  }
  nlohmann::ordered_json manifest;
  manifest["iou_thresholds"] = {0.5, 0.75};
  manifest["images"] = nlohmann::ordered_json::array();
  for (const auto& [image_id, indices] : by_image) {
    std::vector<ScoredDetection> dets;
    for (std::size_t i : indices.first) {
      dets.push_back({scene.detections[i].box, *scene.detections[i].score, image_id, 1});
    }
    std::vector<GroundTruthBox> gts;
    for (std::size_t g : indices.second) {
      gts.push_back({scene.ground_truth[g].box, image_id,
                     scene.ground_truth[g].region_id});
    }
    nlohmann::ordered_json entry;
    entry["image_id"] = image_id;
    for (double thr : {0.5, 0.75}) {
      const MatchResult match = match_detections(dets, gts, thr);
      entry["matched_gt"][fixed6(thr).substr(0, 4)] = match.matched_gt;
    }
    manifest["images"].push_back(entry);
  }
  open_output(opt.manifest_path) << manifest.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// stats

struct StatsOptions {
  std::string in_path;
  std::string format = "auto";
  std::string out_path;
};

int cmd_stats(const StatsOptions& opt) {
  std::string format = opt.format;
  if (format == "auto") {
    const std::string ext = std::filesystem::path(opt.in_path).extension().string();
    if (ext == ".jsonl") {
      format = "jsonl";
    } else if (ext == ".json" || ext == ".geojson") {
      format = "geojson";
    } else {
      throw ValidationError("cannot infer format from extension '" + ext +
                            "'; pass --format jsonl|geojson");
    }
  }
  std::vector<DatasetRecord> records;
  if (format == "jsonl") {
    records = group_records(read_jsonl(opt.in_path));
  } else if (format == "geojson") {
    IngestReport report = ingest_geojson_file(opt.in_path);
    for (const auto& err : report.errors) std::cerr << "warning: " << err << '\n';
    records = std::move(report.records);
  } else {
    throw ValidationError("unknown format '" + format + "'");
  }
  const DatasetStats stats = compute_stats(records);
  if (opt.out_path.empty()) {
    write_stats_csv(std::cout, stats);
  } else {
    std::ofstream out = open_output(opt.out_path);
    write_stats_csv(out, stats);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// mask

struct MaskOptions {
  std::string boxes_path;
  std::string out_path;
  std::string image_id;
  int image_w = 800;
  int image_h = 800;
  int stride = 8;
};

int cmd_mask(const MaskOptions& opt) {
  const std::vector<BoxRecord> records = read_jsonl(opt.boxes_path);
  std::vector<Obb> boxes;
  std::string selected = opt.image_id;
  for (const auto& rec : records) {
    if (selected.empty()) {
      selected = rec.image_id;
    } else if (opt.image_id.empty() && rec.image_id != selected) {
      throw ValidationError("boxes file contains multiple images; pass --image-id");
    }
    if (rec.image_id == selected) boxes.push_back(rec.box);
  }
  const Eigen::MatrixXi mask =
      rasterize_pseudo_mask(boxes, opt.image_h, opt.image_w, opt.stride);
  write_pgm(opt.out_path, mask);
  return 0;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
  std::string geojson_path;
  std::string out_path;
};

int cmd_ingest(const IngestOptions& opt) {
  const IngestReport report = ingest_geojson_file(opt.geojson_path);
  for (const auto& err : report.errors) std::cerr << "error: " << err << '\n';
  for (const auto& warn : report.warnings) std::cerr << "warning: " << warn << '\n';
  std::vector<BoxRecord> records;
  std::size_t boxes = 0;
  for (const auto& rec : report.records) {
    for (const Obb& box : rec.annotations) {
      records.push_back({rec.image_id, rec.region_id, box, std::nullopt, {}, 0});
      ++boxes;
    }
  }
  if (opt.out_path.empty()) {
    write_jsonl(std::cout, records);
  } else {
    write_jsonl(opt.out_path, records);
  }
  std::cerr << "ingested " << report.records.size() << " images, " << boxes
            << " boxes (" << report.degenerate_count << " degenerate skipped, "
            << report.errors.size() << " errors, " << report.warnings.size()
            << " warnings)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oriented-box detection toolkit"};
  app.require_subcommand(1);
  std::function<int()> run;

  EvalOptions eval_opt;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Rotated-AP evaluation of detections against ground truth");
  eval_cmd->add_option("--dets", eval_opt.dets_path, "Detections JSONL")->required();
  eval_cmd->add_option("--gt", eval_opt.gt_path, "Ground-truth JSONL")->required();
  eval_cmd->add_option("--iou", eval_opt.iou_spec, "Comma-separated IoU thresholds");
  eval_cmd->add_flag("--per-region", eval_opt.per_region, "Emit per-region AP rows");
  eval_cmd->add_option("--out", eval_opt.out_path, "Output CSV (default stdout)");
  eval_cmd->add_option("--pr-out", eval_opt.pr_out_path,
                       "Write the pooled PR curve CSV here");
  eval_cmd->add_option("--threads", eval_opt.threads, "Worker threads");
  eval_cmd->callback([&]() { run = [&]() { return cmd_eval(eval_opt); }; });

  NmsOptions nms_opt;
  CLI::App* nms_cmd =
      app.add_subcommand("nms", "Greedy rotated NMS over a detections file");
  nms_cmd->add_option("--in", nms_opt.in_path, "Detections JSONL")->required();
  nms_cmd->add_option("--out", nms_opt.out_path, "Output JSONL (default stdout)");
  nms_cmd->add_option("--config", nms_opt.config_path,
                      "Pipeline config JSON (flags override its values)");
  nms_cmd->add_option("--iou", nms_opt.iou, "Suppression IoU threshold");
  nms_cmd->add_option("--floor", nms_opt.floor, "Minimum score kept");
  nms_cmd->add_option("--max", nms_opt.max_keep, "Maximum detections per image");
  nms_cmd->add_option("--threads", nms_opt.threads, "Worker threads");
  nms_cmd->callback([&]() {
    run = [&]() {
      NmsOptions resolved = nms_opt;
      if (!nms_opt.config_path.empty()) {
        const PipelineConfig cfg = load_pipeline_config(nms_opt.config_path);
        if (!nms_cmd->count("--iou")) resolved.iou = cfg.final_nms_iou;
        if (!nms_cmd->count("--floor")) resolved.floor = cfg.score_floor;
        if (!nms_cmd->count("--max")) resolved.max_keep = cfg.max_boxes;
      }
      return cmd_nms(resolved);
    };
  });

  GraphOptions graph_opt;
  CLI::App* graph_cmd = app.add_subcommand(
      "graph", "Dump the spatial relation graph and context features");
  graph_cmd->add_option("--rois", graph_opt.rois_path, "RoIs JSONL")->required();
  graph_cmd->add_option("--features", graph_opt.features_path,
                        "Feature tensor sidecar JSON")->required();
  graph_cmd->add_option("--weights", graph_opt.weights_path,
                        "ICMM weight sidecar JSON (default: seeded random)");
  graph_cmd->add_option("--out-dir", graph_opt.out_dir, "Output directory")->required();
  graph_cmd->add_option("--config", graph_opt.config_path,
                        "Pipeline config JSON (flags override its values)");
  graph_cmd->add_option("--stacks", graph_opt.stacks, "Number of stacked passes");
  graph_cmd->add_option("--t", graph_opt.t, "Affinity quantization threshold");
  graph_cmd->add_option("--min-extent", graph_opt.min_extent, "Query extent clamp");
  graph_cmd->add_option("--key-iou", graph_opt.key_iou, "Key NMS IoU threshold");
  graph_cmd->add_option("--seed", graph_opt.seed, "Seed for random weights");
  graph_cmd->add_flag("--binary", graph_opt.binary, "Also dump f32 tensors");
  graph_cmd->callback([&]() {
    run = [&]() {
      GraphOptions resolved = graph_opt;
      if (!graph_opt.config_path.empty()) {
        const PipelineConfig cfg = load_pipeline_config(graph_opt.config_path);
        if (!graph_cmd->count("--stacks")) resolved.stacks = cfg.icmm_stacks;
        if (!graph_cmd->count("--t")) resolved.t = cfg.relation_t;
        if (!graph_cmd->count("--min-extent")) resolved.min_extent = cfg.min_extent;
        if (!graph_cmd->count("--key-iou")) resolved.key_iou = cfg.key_nms_iou;
      }
      return cmd_graph(resolved);
    };
  });

  SynthOptions synth_opt;
  CLI::App* synth_cmd = app.add_subcommand(
      "synth", "Generate a deterministic synthetic GT/detection pair");
  synth_cmd->add_option("--images", synth_opt.cfg.images, "Number of images");
  synth_cmd->add_option("--boxes-per-image", synth_opt.cfg.boxes_per_image,
                        "Boxes per image");
  synth_cmd->add_option("--seed", synth_opt.cfg.seed, "RNG seed");
  synth_cmd->add_option("--noise", synth_opt.cfg.noise, "Jitter magnitude (sigma)");
  synth_cmd->add_option("--image-size", synth_opt.cfg.image_size, "Square image size");
  synth_cmd->add_option("--regions", synth_opt.cfg.regions, "Region count");
  synth_cmd->add_option("--gt-out", synth_opt.gt_path, "Ground-truth JSONL")->required();
  synth_cmd->add_option("--dets-out", synth_opt.dets_path, "Detections JSONL")->required();
  synth_cmd->add_option("--manifest-out", synth_opt.manifest_path,
                        "Match manifest JSON (optional)");
  synth_cmd->callback([&]() { run = [&]() { return cmd_synth(synth_opt); }; });

  StatsOptions stats_opt;
  CLI::App* stats_cmd =
      app.add_subcommand("stats", "Dataset statistics (sqrt-area, boxes per image)");
  stats_cmd->add_option("--in", stats_opt.in_path, "GT JSONL or GeoJSON")->required();
  stats_cmd->add_option("--format", stats_opt.format, "auto|jsonl|geojson");
  stats_cmd->add_option("--out", stats_opt.out_path, "Output CSV (default stdout)");
  stats_cmd->callback([&]() { run = [&]() { return cmd_stats(stats_opt); }; });

  MaskOptions mask_opt;
  CLI::App* mask_cmd =
      app.add_subcommand("mask", "Render the pseudo-mask of one image as PGM");
  mask_cmd->add_option("--boxes", mask_opt.boxes_path, "Boxes JSONL")->required();
  mask_cmd->add_option("--out", mask_opt.out_path, "Output PGM")->required();
  mask_cmd->add_option("--image-id", mask_opt.image_id,
                       "Image to render (required for multi-image files)");
  mask_cmd->add_option("--image-w", mask_opt.image_w, "Image width in pixels");
  mask_cmd->add_option("--image-h", mask_opt.image_h, "Image height in pixels");
  mask_cmd->add_option("--stride", mask_opt.stride, "Mask stride (pixels per cell)");
  mask_cmd->callback([&]() { run = [&]() { return cmd_mask(mask_opt); }; });

  IngestOptions ingest_opt;
  CLI::App* ingest_cmd = app.add_subcommand(
      "ingest", "Convert GeoJSON polygon footprints to oriented-box JSONL");
  ingest_cmd->add_option("--geojson", ingest_opt.geojson_path, "GeoJSON input")
      ->required();
  ingest_cmd->add_option("--out", ingest_opt.out_path, "Output JSONL (default stdout)");
  ingest_cmd->callback([&]() { run = [&]() { return cmd_ingest(ingest_opt); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    return run();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidBoxError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DegenerateInputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
