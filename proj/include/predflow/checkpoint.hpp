#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "predflow/mlp.hpp"
#include "predflow/tensor.hpp"

namespace predflow {

// A checkpoint file is one line of compact JSON (the header, which lists the
// tensor names under "tensors") followed by one PFTENSOR record per name.
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Embeds `net` under `prefix`: header[prefix] describes the layers and the
// tensors are stored as "<prefix>.W<i>" / "<prefix>.b<i>".
void put_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp& net);
Mlp get_mlp(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace predflow
