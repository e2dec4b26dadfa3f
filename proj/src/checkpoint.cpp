#include "sqz/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "sqz/error.hpp"

namespace sqz::nn {

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["version"] = kVersion;
  header["module_kind"] = module_kind;
  header["hyperparams"] = hyperparams;
  header["tensors"] = nlohmann::json::object();
  std::vector<std::uint8_t> payload;
  for (const auto& [name, t] : tensors) {
    header["tensors"][name] = {{"offset", payload.size()}, {"shape", t.shape}};
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.data.data());
    payload.insert(payload.end(), bytes, bytes + t.data.size() * sizeof(float));
  }
  const std::string text = header.dump();
  const auto header_len = static_cast<std::uint32_t>(text.size());
  const auto crc = static_cast<std::uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size())));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write("SQZC", 4);
  f.write(reinterpret_cast<const char*>(&header_len), 4);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  f.write(reinterpret_cast<const char*>(&crc), 4);
  if (!f) throw IoError("write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SQZC", 4) != 0) {
    throw LoadError(path.string() + ": not a checkpoint");
  }
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 4, 4);
  if (8 + static_cast<std::size_t>(header_len) + 4 > bytes.size()) throw LoadError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("version", 0) != kVersion) throw LoadError(path.string() + ": unsupported checkpoint version");

  const std::uint8_t* payload = bytes.data() + 8 + header_len;
  const std::size_t payload_len = bytes.size() - 8 - header_len - 4;
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (static_cast<std::uint32_t>(crc32(0L, payload, static_cast<uInt>(payload_len))) != stored_crc) {
    throw LoadError(path.string() + ": payload CRC mismatch");
  }

  Checkpoint c;
  c.module_kind = header.at("module_kind").get<std::string>();
  c.hyperparams = header.at("hyperparams");
  for (const auto& [name, meta] : header.at("tensors").items()) {
    StoredTensor t;
    t.shape = meta.at("shape").get<std::vector<std::size_t>>();
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    const auto offset = meta.at("offset").get<std::size_t>();
    if (offset + n * sizeof(float) > payload_len) throw LoadError(path.string() + ": tensor " + name + " out of range");
    t.data.resize(n);
    std::memcpy(t.data.data(), payload + offset, n * sizeof(float));
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace sqz::nn
