#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "appvae/autodiff.hpp"
#include "appvae/errors.hpp"
#include "json.hpp"

namespace appvae {

// Checkpoint layout:
//   8-byte magic "APPVAE1\n"
//   u64 little-endian manifest length
//   manifest JSON: {"version", "dtype", "arrays": [{name, rows, cols}], "config"}
//   raw float64 little-endian payload, arrays concatenated in manifest order
// Files are written to <path>.tmp and renamed, so readers never see a
// truncated checkpoint.

inline constexpr char kCheckpointMagic[8] = {'A', 'P', 'P', 'V', 'A', 'E', '1', '\n'};
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

inline void save_store(const std::filesystem::path& path, const ParameterStore& store,
                       const nlohmann::json& config_echo) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["dtype"] = "float64";
  manifest["config"] = config_echo;
  auto& arrays = manifest["arrays"] = nlohmann::json::array();
  for (const auto& p : store.params())
    arrays.push_back({{"name", p->name}, {"rows", p->rows}, {"cols", p->cols}});
  const std::string header = manifest.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : store.params())
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Populates `store` (which must be empty) and returns the config echo.
inline nlohmann::json load_store(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw ValidationError("not an appvae checkpoint: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1ull << 30))
    throw ValidationError("corrupt checkpoint header: " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated checkpoint manifest: " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("version", -1) != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version");
  if (manifest.value("dtype", "") != "float64")
    throw ValidationError("unsupported checkpoint dtype");

  for (const auto& entry : manifest.at("arrays")) {
    Param& p = store.add_raw(entry.at("name").get<std::string>(), entry.at("rows").get<int>(),
                             entry.at("cols").get<int>());
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated checkpoint payload: " + path.string());
  }
  return manifest.at("config");
}

}  // namespace appvae
