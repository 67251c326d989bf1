#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace cfu {

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "data";
  // Root for pixel_data_ref lookups when fitting missing dish ellipses.
  std::filesystem::path image_root = ".";
  int jobs = 0;  // 0: OpenMP default
};

struct SettingsOverrides {
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> image_root;
  std::optional<int> jobs;
  std::optional<std::filesystem::path> config;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

EnvLookup process_env();

// Precedence: flag > environment (CFU_HOST, CFU_PORT, CFU_DATA_DIR,
// CFU_IMAGE_ROOT, CFU_JOBS; CFU_CONFIG names the file) > config file
// (host, port, data_dir, image_root, jobs) > default.
ServiceSettings resolve_settings(const SettingsOverrides& flags, const EnvLookup& env = process_env());

}  // namespace cfu
