#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/dual_model.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// On-disk state of a finished run: the global model, one offset per client,
/// and alpha. Stored as <base>.json (manifest: names, shapes, byte ranges)
/// plus <base>.bin (tensor payloads in the wire format).
struct Checkpoint {
  ModelParams model;
  std::vector<Offset> offsets;
  double alpha = 0.3;
};

inline void save_checkpoint(const std::string& base_path, const ModelParams& model,
                            const std::vector<Offset>& offsets, Alpha alpha) {
  nlohmann::json manifest;
  manifest["alpha"] = alpha.value;
  manifest["channels"] = model.channels;
  manifest["backbone_layers"] = model.backbone.size();

  std::vector<std::uint8_t> blob;
  auto add_tensor = [&](const std::string& name, const Tensor& t) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["byte_offset"] = blob.size();
    serialize_tensor(t, blob);
    entry["byte_length"] = blob.size() - entry["byte_offset"].get<std::size_t>();
    manifest["tensors"].push_back(entry);
  };
  model.for_each_tensor(add_tensor);
  for (std::size_t i = 0; i < offsets.size(); ++i)
    add_tensor("offset." + std::to_string(i), offsets[i].t);

  std::ofstream json_out(base_path + ".json");
  if (!json_out) throw std::runtime_error("checkpoint: cannot write " + base_path + ".json");
  json_out << manifest.dump(2) << "\n";
  std::ofstream bin_out(base_path + ".bin", std::ios::binary);
  if (!bin_out) throw std::runtime_error("checkpoint: cannot write " + base_path + ".bin");
  bin_out.write(reinterpret_cast<const char*>(blob.data()),
                static_cast<std::streamsize>(blob.size()));
}

inline Checkpoint load_checkpoint(const std::string& base_path) {
  std::ifstream json_in(base_path + ".json");
  if (!json_in) throw std::runtime_error("checkpoint: cannot read " + base_path + ".json");
  nlohmann::json manifest = nlohmann::json::parse(json_in);

  std::ifstream bin_in(base_path + ".bin", std::ios::binary);
  if (!bin_in) throw std::runtime_error("checkpoint: cannot read " + base_path + ".bin");
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin_in)),
                                 std::istreambuf_iterator<char>());

  Checkpoint ck;
  ck.alpha = manifest.at("alpha").get<double>();
  ck.model.channels = manifest.at("channels").get<int>();
  const std::size_t backbone_layers = manifest.at("backbone_layers").get<std::size_t>();
  ck.model.backbone.resize(backbone_layers);

  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    std::size_t pos = entry.at("byte_offset").get<std::size_t>();
    Tensor t = deserialize_tensor(blob, pos);
    if (name.rfind("backbone.", 0) == 0) {
      const std::size_t dot = name.find('.', 9);
      const std::size_t layer = std::stoul(name.substr(9, dot - 9));
      if (layer >= backbone_layers) throw std::runtime_error("checkpoint: bad layer index");
      if (name.substr(dot + 1) == "weight")
        ck.model.backbone[layer].weight = std::move(t);
      else
        ck.model.backbone[layer].bias = std::move(t);
    } else if (name == "dense.weight") {
      ck.model.dense.weight = std::move(t);
    } else if (name == "dense.bias") {
      ck.model.dense.bias = std::move(t);
    } else if (name == "logits.weight") {
      ck.model.logits.weight = std::move(t);
    } else if (name == "logits.bias") {
      ck.model.logits.bias = std::move(t);
    } else if (name.rfind("offset.", 0) == 0) {
      const std::size_t idx = std::stoul(name.substr(7));
      if (ck.offsets.size() <= idx) ck.offsets.resize(idx + 1);
      ck.offsets[idx] = Offset{std::move(t)};
    } else {
      throw std::runtime_error("checkpoint: unknown tensor " + name);
    }
  }
  return ck;
}

}  // namespace fedsim
