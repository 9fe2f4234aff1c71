// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "obbkit/errors.hpp"
#include "obbkit/relation_graph.hpp"

namespace obbkit {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

/// Named 2-D tensors; vectors are stored as n x 1.
using TensorMap = std::map<std::string, Eigen::MatrixXd>;

/// Writes tensors as row-major little-endian IEEE-754 f32 binary plus a JSON
/// sidecar describing names, shapes and byte offsets.
inline void save_tensors(const std::string& bin_path, const std::string& sidecar_path,
                         const TensorMap& tensors) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw ValidationError("cannot open file for writing: " + bin_path);
  nlohmann::ordered_json sidecar;
  sidecar["format"] = "obbkit-tensors-v1";
  sidecar["dtype"] = "f32";
  sidecar["byte_order"] = "little";
  sidecar["data_file"] = std::filesystem::path(bin_path).filename().string();
  sidecar["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = {tensor.rows(), tensor.cols()};
    entry["offset"] = offset;
    sidecar["tensors"].push_back(entry);
    for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
      for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
        const float v = static_cast<float>(tensor(r, c));
        bin.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
    }
    offset += static_cast<std::uint64_t>(tensor.size()) * sizeof(float);
  }
  if (!bin) throw ValidationError("failed writing tensor data: " + bin_path);
  std::ofstream side(sidecar_path, std::ios::binary);
  if (!side) throw ValidationError("cannot open file for writing: " + sidecar_path);
  side << sidecar.dump(2) << '\n';
}

/// Loads tensors from a sidecar; the binary path is resolved relative to the
/// sidecar's directory.
inline TensorMap load_tensors(const std::string& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) throw ValidationError("cannot open file: " + sidecar_path);
  nlohmann::json sidecar;
  try {
    side >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(sidecar_path, 1, std::string("invalid JSON: ") + e.what());
  }
  if (sidecar.value("dtype", "") != "f32" ||
      sidecar.value("byte_order", "") != "little" || !sidecar.contains("tensors") ||
      !sidecar.contains("data_file")) {
    throw ValidationError("tensor sidecar: expected f32 little-endian format: " +
                          sidecar_path);
  }
  const std::filesystem::path bin_path =
      std::filesystem::path(sidecar_path).parent_path() /
      sidecar["data_file"].get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ValidationError("cannot open tensor data: " + bin_path.string());

  TensorMap tensors;
  for (const auto& entry : sidecar["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    const auto& shape = entry.at("shape");
    if (!shape.is_array() || shape.size() != 2) {
      throw ValidationError("tensor sidecar: shape of '" + name + "' must be [rows, cols]");
    }
    const Eigen::Index rows = shape[0].get<Eigen::Index>();
    const Eigen::Index cols = shape[1].get<Eigen::Index>();
    bin.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    std::vector<float> buf(static_cast<std::size_t>(rows * cols));
    bin.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bin) {
      throw ValidationError("tensor data truncated while reading '" + name + "'");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        m(r, c) = static_cast<double>(buf[static_cast<std::size_t>(r * cols + c)]);
      }
    }
    tensors.emplace(name, std::move(m));
  }
  return tensors;
}

inline void save_icmm_params(const IcmmParams& params, const std::string& bin_path,
                             const std::string& sidecar_path) {
  TensorMap tensors;
  tensors["icmm.query_proj"] = params.query_proj;
  tensors["icmm.key_proj"] = params.key_proj;
  tensors["icmm.head.w1"] = params.head_w1;
  tensors["icmm.head.b1"] = params.head_b1;
  tensors["icmm.head.w2"] = params.head_w2;
  tensors["icmm.head.b2"] = params.head_b2;
  save_tensors(bin_path, sidecar_path, tensors);
}

inline IcmmParams load_icmm_params(const std::string& sidecar_path) {
  TensorMap tensors = load_tensors(sidecar_path);
  auto take = [&](const char* name) -> Eigen::MatrixXd {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ValidationError(std::string("weights file missing tensor '") + name + "'");
    }
    return std::move(it->second);
  };
  IcmmParams p;
  p.query_proj = take("icmm.query_proj");
  p.key_proj = take("icmm.key_proj");
  p.head_w1 = take("icmm.head.w1");
  p.head_b1 = take("icmm.head.b1");
  p.head_w2 = take("icmm.head.w2");
  p.head_b2 = take("icmm.head.b2");
  return p;
}

}  // namespace obbkit
