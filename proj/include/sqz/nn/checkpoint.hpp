#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/nn/tensor.hpp"

namespace sqz::nn {

struct StoredTensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// Container layout: "SQZC", u32 header length, JSON header
/// {version, module_kind, hyperparams, tensors: name -> {offset, shape}},
/// concatenated float32 payload, then a u32 CRC32 of the payload.
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string module_kind;
  nlohmann::json hyperparams = nlohmann::json::object();
  std::map<std::string, StoredTensor> tensors;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

template <typename T>
void store_params(Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix) {
  for (const auto* p : params) {
    StoredTensor t;
    t.shape = p->value.shape();
    t.data.assign(p->value.values().begin(), p->value.values().end());
    ckpt.tensors[prefix + p->name] = std::move(t);
  }
}

/// Copies tensors into matching parameters; a missing name or a shape
/// difference is a LoadError.
template <typename T>
void restore_params(const Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix) {
  for (auto* p : params) {
    const auto it = ckpt.tensors.find(prefix + p->name);
    if (it == ckpt.tensors.end()) throw LoadError("checkpoint lacks tensor " + prefix + p->name);
    if (it->second.shape != p->value.shape()) throw LoadError("checkpoint tensor " + prefix + p->name + " has the wrong shape");
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<T>(it->second.data[i]);
  }
}

}  // namespace sqz::nn
