#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qteam/decoder.hpp"

namespace qteam {

/// Writes parameters as a flat little-endian float64 blob (tensors
/// concatenated row-major in tensor_refs order) plus a JSON manifest
/// carrying the model config and per-tensor shapes and byte offsets.
inline void save_checkpoint(const ModelParams& params, const std::string& bin_path,
                            const std::string& manifest_path) {
  ModelParams& p = const_cast<ModelParams&>(params);  // refs are read-only here
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot open " + bin_path);

  nlohmann::json manifest;
  manifest["format"] = "qteam-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64-little-endian";
  manifest["model"] = {{"embed_dim", p.cfg.embed_dim},   {"layers", p.cfg.layers},
                       {"classes", p.cfg.classes},       {"feature_dim", p.cfg.feature_dim},
                       {"ffn_dim", p.cfg.ffn_dim},       {"pe_base", p.cfg.pe_base}};
  manifest["tensors"] = nlohmann::json::array();

  std::uint64_t offset = 0;
  for (const TensorRef& ref : tensor_refs(p)) {
    const auto& m = *ref.mat;
    manifest["tensors"].push_back({{"name", ref.name},
                                   {"rows", m.rows()},
                                   {"cols", m.cols()},
                                   {"offset_bytes", offset}});
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double v = m(i, j);
        bin.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    }
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
  }
  std::ofstream mf(manifest_path);
  if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + manifest_path);
  mf << manifest.dump(2) << "\n";
}

inline ModelParams load_checkpoint(const std::string& bin_path,
                                   const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("load_checkpoint: cannot open " + manifest_path);
  nlohmann::json manifest;
  mf >> manifest;
  if (manifest.value("format", "") != "qteam-checkpoint") {
    throw std::runtime_error("load_checkpoint: unrecognized manifest format");
  }
  ModelConfig cfg;
  const auto& m = manifest.at("model");
  cfg.embed_dim = m.at("embed_dim");
  cfg.layers = m.at("layers");
  cfg.classes = m.at("classes");
  cfg.feature_dim = m.at("feature_dim");
  cfg.ffn_dim = m.at("ffn_dim");
  cfg.pe_base = m.at("pe_base");

  ModelParams params = make_params(cfg);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open " + bin_path);

  const auto refs = tensor_refs(params);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != refs.size()) {
    throw std::runtime_error("load_checkpoint: tensor count mismatch");
  }
  for (std::size_t t = 0; t < refs.size(); ++t) {
    const auto& entry = tensors.at(t);
    auto& mat = *refs[t].mat;
    if (entry.at("name") != refs[t].name || entry.at("rows") != mat.rows() ||
        entry.at("cols") != mat.cols()) {
      throw std::runtime_error("load_checkpoint: shape mismatch for tensor " + refs[t].name);
    }
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      for (Eigen::Index j = 0; j < mat.cols(); ++j) {
        double v;
        bin.read(reinterpret_cast<char*>(&v), sizeof(double));
        if (!bin) throw std::runtime_error("load_checkpoint: truncated blob");
        mat(i, j) = v;
      }
    }
  }
  return params;
}

}  // namespace qteam
