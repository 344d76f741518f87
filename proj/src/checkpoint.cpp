#include "predflow/checkpoint.hpp"

#include <fstream>

#include "predflow/errors.hpp"

namespace predflow {

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw BadFormat("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, _] : ckpt.tensors) header["tensors"].push_back(name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << header.dump() << '\n';
  for (const auto& [_, t] : ckpt.tensors) write_tensor(out, t);
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw BadFormat("empty checkpoint");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw BadFormat(std::string("checkpoint header: ") + e.what());
  }
  if (!ckpt.header.contains("tensors") || !ckpt.header["tensors"].is_array()) {
    throw BadFormat("checkpoint header lacks a tensor list");
  }
  for (const auto& name : ckpt.header["tensors"]) {
    ckpt.tensors.emplace(name.get<std::string>(), read_tensor(in));
  }
  ckpt.header.erase("tensors");
  return ckpt;
}

void put_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp& net) {
  nlohmann::json desc;
  desc["input_dim"] = net.input_dim();
  desc["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < net.depth(); ++i) {
    const auto& l = net.layers()[i];
    desc["layers"].push_back(
        {{"out", l.weight.rows()}, {"activation", std::string(to_string(l.activation))}});
    ckpt.tensors[prefix + ".W" + std::to_string(i)] = Tensor::from_matrix(l.weight);
    ckpt.tensors[prefix + ".b" + std::to_string(i)] = Tensor::from_vector(l.bias);
  }
  ckpt.header[prefix] = desc;
}

Mlp get_mlp(const Checkpoint& ckpt, const std::string& prefix) {
  if (!ckpt.header.contains(prefix)) throw BadFormat("checkpoint has no network '" + prefix + "'");
  const auto& desc = ckpt.header.at(prefix);
  std::vector<Layer> layers;
  try {
    for (std::size_t i = 0; i < desc.at("layers").size(); ++i) {
      const auto& ld = desc["layers"][i];
      const Tensor& w = ckpt.tensor(prefix + ".W" + std::to_string(i));
      const Tensor& b = ckpt.tensor(prefix + ".b" + std::to_string(i));
      if (w.rank() != 2 || b.rank() != 1) throw BadFormat("bad layer tensor rank in " + prefix);
      if (static_cast<Index>(w.shape()[0]) != ld.at("out").get<Index>()) {
        throw BadFormat("layer size disagrees with header in " + prefix);
      }
      layers.push_back({Mat(w.matrix()), b.vector(),
                        activation_from_string(ld.at("activation").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw BadFormat(std::string("network descriptor: ") + e.what());
  }
  return Mlp(std::move(layers));
}

}  // namespace predflow
