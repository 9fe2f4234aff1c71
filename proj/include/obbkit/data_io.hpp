// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "obbkit/errors.hpp"
#include "obbkit/geometry.hpp"
#include "obbkit/random.hpp"

namespace obbkit {

/// One line of the JSONL interchange format. Records without a score are
/// ground truth. Unknown fields are preserved in `extras` and written back
/// verbatim; they carry no meaning here.
struct BoxRecord {
  std::string image_id;
  std::string region_id;
  Obb box;
  std::optional<double> score;
  nlohmann::ordered_json extras = nlohmann::ordered_json::object();
  std::size_t source_line = 0;  // 1-based line in the source file, 0 if synthetic

  bool is_ground_truth() const { return !score.has_value(); }
};

inline nlohmann::ordered_json box_record_to_json(const BoxRecord& rec) {
  nlohmann::ordered_json j;
  j["image_id"] = rec.image_id;
  j["region_id"] = rec.region_id;
  j["cx"] = rec.box.cx;
  j["cy"] = rec.box.cy;
  j["w"] = rec.box.w;
  j["h"] = rec.box.h;
  j["theta"] = rec.box.theta;
  if (rec.score) j["score"] = *rec.score;
  for (const auto& [key, value] : rec.extras.items()) j[key] = value;
  return j;
}

inline BoxRecord parse_box_record(const std::string& line, const std::string& file,
                                  std::size_t lineno) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file, lineno, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(file, lineno, "record is not a JSON object");

  auto require_string = [&](const char* key) -> std::string {
    if (!j.contains(key)) {
      throw ParseError(file, lineno, std::string("missing field '") + key + "'");
    }
    if (!j[key].is_string()) {
      throw ParseError(file, lineno, std::string("field '") + key + "' must be a string");
    }
    return j[key].get<std::string>();
  };
  auto require_number = [&](const char* key) -> double {
    if (!j.contains(key)) {
      throw ParseError(file, lineno, std::string("missing field '") + key + "'");
    }
    if (!j[key].is_number()) {
      throw ParseError(file, lineno, std::string("field '") + key + "' must be a number");
    }
    return j[key].get<double>();
  };

  BoxRecord rec;
  rec.source_line = lineno;
  rec.image_id = require_string("image_id");
  rec.region_id = require_string("region_id");
  rec.box.cx = require_number("cx");
  rec.box.cy = require_number("cy");
  rec.box.w = require_number("w");
  rec.box.h = require_number("h");
  rec.box.theta = require_number("theta");
  if (!is_valid(rec.box)) {
    throw ParseError(file, lineno, "invalid box: extents must be positive and finite");
  }
  if (j.contains("score")) {
    if (!j["score"].is_number()) {
      throw ParseError(file, lineno, "field 'score' must be a number");
    }
    rec.score = j["score"].get<double>();
  }
  static const std::array<const char*, 8> known{
      "image_id", "region_id", "cx", "cy", "w", "h", "theta", "score"};
  for (const auto& [key, value] : j.items()) {
    bool is_known = false;
    for (const char* k : known) {
      if (key == k) {
        is_known = true;
        break;
      }
    }
    if (!is_known) rec.extras[key] = value;
  }
  return rec;
}

/// Reads a JSONL file of box records; blank lines are skipped. Malformed
/// lines raise ParseError carrying the file name and line number.
inline std::vector<BoxRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::vector<BoxRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_box_record(line, path, lineno));
  }
  return records;
}

inline void write_jsonl(std::ostream& out, std::span<const BoxRecord> records) {
  for (const auto& rec : records) {
    out << box_record_to_json(rec).dump() << '\n';
  }
}

inline void write_jsonl(const std::string& path, std::span<const BoxRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open file for writing: " + path);
  write_jsonl(out, records);
}

/// One image's annotations.
struct DatasetRecord {
  std::string image_id;
  std::string region_id;
  int image_w = 0;  // 0 when unknown
  int image_h = 0;
  std::vector<Obb> annotations;
};

/// Result of polygon ingestion. Degenerate polygons are skipped and counted;
/// malformed features are reported per record and ingestion continues.
struct IngestReport {
  std::vector<DatasetRecord> records;
  std::size_t degenerate_count = 0;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;  // e.g. boxes outside image bounds
};

/// Ingests a GeoJSON FeatureCollection of Polygon features. Only the outer
/// ring is used; each polygon becomes its minimum-area enclosing rectangle.
/// Recognized feature properties: image_id, region_id, image_width,
/// image_height (all optional, with defaults).
inline IngestReport ingest_geojson(const nlohmann::json& root) {
  if (!root.is_object() || root.value("type", "") != "FeatureCollection" ||
      !root.contains("features") || !root["features"].is_array()) {
    throw ValidationError("ingest: expected a GeoJSON FeatureCollection");
  }
  IngestReport report;
  std::unordered_map<std::string, std::size_t> index_by_image;
  std::size_t feature_index = 0;
  for (const auto& feature : root["features"]) {
    const std::size_t fid = feature_index++;
    auto fail = [&](const std::string& why) {
      report.errors.push_back("feature " + std::to_string(fid) + ": " + why);
    };
    if (!feature.is_object() || feature.value("type", "") != "Feature") {
      fail("not a Feature object");
      continue;
    }
    const auto& geometry = feature.contains("geometry") ? feature["geometry"]
                                                        : nlohmann::json();
    if (!geometry.is_object() || geometry.value("type", "") != "Polygon" ||
        !geometry.contains("coordinates") || !geometry["coordinates"].is_array() ||
        geometry["coordinates"].empty()) {
      fail("geometry must be a Polygon with coordinates");
      continue;
    }
    std::vector<Vec2> ring;
    bool ok = true;
    for (const auto& pt : geometry["coordinates"][0]) {  // outer ring only
      if (!pt.is_array() || pt.size() < 2 || !pt[0].is_number() || !pt[1].is_number()) {
        fail("ring vertex must be an [x, y] pair");
        ok = false;
        break;
      }
      ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    if (!ok) continue;
    if (ring.size() >= 2 && ring.front().x == ring.back().x &&
        ring.front().y == ring.back().y) {
      ring.pop_back();  // drop GeoJSON's closing duplicate vertex
    }

    const auto props = feature.contains("properties") && feature["properties"].is_object()
                           ? feature["properties"]
                           : nlohmann::json::object();
    const std::string image_id = props.value("image_id", std::string("image_0"));
    const std::string region_id = props.value("region_id", std::string("default"));
    const int image_w = props.value("image_width", 0);
    const int image_h = props.value("image_height", 0);

    Obb box;
    try {
      box = min_area_rect(ring);
    } catch (const DegenerateInputError&) {
      ++report.degenerate_count;
      continue;
    }

    auto [it, inserted] = index_by_image.emplace(image_id, report.records.size());
    if (inserted) {
      report.records.push_back({image_id, region_id, image_w, image_h, {}});
    }
    DatasetRecord& rec = report.records[it->second];
    if (rec.image_w == 0) rec.image_w = image_w;
    if (rec.image_h == 0) rec.image_h = image_h;
    rec.annotations.push_back(box);
  }

  // Bounds check is advisory: warn, never reject.
  for (const auto& rec : report.records) {
    if (rec.image_w <= 0 || rec.image_h <= 0) continue;
    for (std::size_t b = 0; b < rec.annotations.size(); ++b) {
      for (const Vec2& v : corners(rec.annotations[b]).vertices) {
        if (v.x < -1.0 || v.y < -1.0 || v.x > rec.image_w + 1.0 ||
            v.y > rec.image_h + 1.0) {
          report.warnings.push_back("image '" + rec.image_id + "' box " +
                                    std::to_string(b) + " extends outside image bounds");
          break;
        }
      }
    }
  }
  return report;
}

inline IngestReport ingest_geojson_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, 1, std::string("invalid JSON: ") + e.what());
  }
  return ingest_geojson(root);
}

/// Deterministic (train, test, val) split.
struct SplitResult {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  std::vector<DatasetRecord> val;
};

/// Seeded Fisher-Yates shuffle followed by a largest-remainder partition, so
/// subset sizes are within one of the exact proportions. The same seed always
/// produces the same split.
inline SplitResult split(std::span<const DatasetRecord> records,
                         std::array<double, 3> ratios = {3.0, 1.0, 1.0},
                         std::uint64_t seed = 42) {
  double ratio_sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ValidationError("split: ratios must be positive");
    ratio_sum += r;
  }
  const std::size_t n = records.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }

  std::array<std::size_t, 3> counts{};
  std::array<double, 3> fractional{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * ratios[k] / ratio_sum;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    fractional[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  while (assigned < n) {  // distribute the remainder by largest fraction
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (fractional[k] > fractional[best]) best = k;
    }
    ++counts[best];
    fractional[best] = -1.0;
    ++assigned;
  }

  SplitResult result;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    auto* bucket = k == 0 ? &result.train : (k == 1 ? &result.test : &result.val);
    bucket->reserve(counts[k]);
    for (std::size_t i = 0; i < counts[k]; ++i, ++pos) {
      bucket->push_back(records[perm[pos]]);
    }
  }
  return result;
}

/// Histogram summary of a dataset: sqrt of box areas (8 px buckets over
/// [0, 256), larger values clamp into the last bucket) and exact
/// boxes-per-image counts.
struct DatasetStats {
  static constexpr int kSqrtAreaBucketWidth = 8;
  static constexpr int kSqrtAreaBucketCount = 32;

  std::array<std::uint64_t, kSqrtAreaBucketCount> sqrt_area_histogram{};
  std::vector<std::uint64_t> boxes_per_image_histogram;  // index = boxes per image
  std::uint64_t total_images = 0;
  std::uint64_t total_instances = 0;
};

inline DatasetStats compute_stats(std::span<const DatasetRecord> records) {
  DatasetStats stats;
  std::size_t max_count = 0;
  for (const auto& rec : records) {
    max_count = std::max(max_count, rec.annotations.size());
  }
  stats.boxes_per_image_histogram.assign(records.empty() ? 0 : max_count + 1, 0);
  for (const auto& rec : records) {
    ++stats.total_images;
    ++stats.boxes_per_image_histogram[rec.annotations.size()];
    for (const Obb& box : rec.annotations) {
      ++stats.total_instances;
      const double sqrt_area = std::sqrt(box.area());
      int bucket = static_cast<int>(sqrt_area / DatasetStats::kSqrtAreaBucketWidth);
      bucket = std::clamp(bucket, 0, DatasetStats::kSqrtAreaBucketCount - 1);
      ++stats.sqrt_area_histogram[static_cast<std::size_t>(bucket)];
    }
  }
  return stats;
}

/// CSV layout: header `statistic,lower,upper,count`, nonzero sqrt_area
/// buckets, nonzero boxes_per_image buckets, then total rows. An empty
/// dataset yields the header only.
inline void write_stats_csv(std::ostream& out, const DatasetStats& stats) {
  out << "statistic,lower,upper,count\n";
  if (stats.total_images == 0 && stats.total_instances == 0) return;
  for (int b = 0; b < DatasetStats::kSqrtAreaBucketCount; ++b) {
    const auto count = stats.sqrt_area_histogram[static_cast<std::size_t>(b)];
    if (count == 0) continue;
    out << "sqrt_area," << b * DatasetStats::kSqrtAreaBucketWidth << ','
        << (b + 1) * DatasetStats::kSqrtAreaBucketWidth << ',' << count << '\n';
  }
  for (std::size_t k = 0; k < stats.boxes_per_image_histogram.size(); ++k) {
    const auto count = stats.boxes_per_image_histogram[k];
    if (count == 0) continue;
    out << "boxes_per_image," << k << ',' << k + 1 << ',' << count << '\n';
  }
  out << "total_images,,," << stats.total_images << '\n';
  out << "total_instances,,," << stats.total_instances << '\n';
}

/// Groups flat box records into per-image dataset records (image dims
/// unknown). Region comes from the first record of each image; later
/// disagreement raises ValidationError.
inline std::vector<DatasetRecord> group_records(std::span<const BoxRecord> records) {
  std::vector<DatasetRecord> out;
  std::unordered_map<std::string, std::size_t> index_by_image;
  for (const auto& rec : records) {
    auto [it, inserted] = index_by_image.emplace(rec.image_id, out.size());
    if (inserted) {
      out.push_back({rec.image_id, rec.region_id, 0, 0, {}});
    } else if (out[it->second].region_id != rec.region_id) {
      throw ValidationError("image '" + rec.image_id + "' appears in multiple regions");
    }
    out[it->second].annotations.push_back(rec.box);
  }
  return out;
}

}  // namespace obbkit
