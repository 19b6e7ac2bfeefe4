#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace etann {

/// FNV-1a 64-bit over raw bytes; the content hash used in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string file_content_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("file_content_hash: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::ostringstream hex;
  hex << std::hex << fnv1a64(ss.str());
  return hex.str();
}

/// One manifest per artifact directory: what command produced it, from which
/// inputs (by content hash), with which seeds. Timestamps live only here, so
/// the data artifacts themselves stay byte-reproducible.
struct RunManifest {
  std::string command;
  std::string config_path;
  nlohmann::json seeds;
  nlohmann::json inputs = nlohmann::json::object();   // path -> content hash
  nlohmann::json outputs = nlohmann::json::object();  // path -> content hash
  std::string out_dir;

  void add_input(const std::string& path) { inputs[path] = file_content_hash(path); }
  void add_output(const std::string& path) { outputs[path] = file_content_hash(path); }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_path;
    if (!config_path.empty() && std::filesystem::exists(config_path))
      j["config_hash"] = file_content_hash(config_path);
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["out_dir"] = out_dir;
    const auto now = std::chrono::system_clock::now();
    j["written_at_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
    std::ofstream os(path);
    if (!os) throw std::runtime_error("RunManifest::save: cannot open " + path);
    os << j.dump(2) << "\n";
  }
};

}  // namespace etann
