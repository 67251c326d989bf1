#include "cfu/settings.hpp"

#include <cstdlib>

#include <fmt/format.h>

#include "cfu/error.hpp"
#include "cfu/kv_config.hpp"

namespace cfu {

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

ServiceSettings resolve_settings(const SettingsOverrides& flags, const EnvLookup& env) {
  ServiceSettings s;
  std::optional<std::filesystem::path> config = flags.config;
  if (!config) {
    if (auto v = env("CFU_CONFIG")) config = *v;
  }
  KeyValues file;
  if (config) file = read_key_values(*config);
  for (const auto& [key, _] : file) {
    if (key != "host" && key != "port" && key != "data_dir" && key != "image_root" && key != "jobs") {
      throw InvalidArgument(fmt::format("unknown service setting '{}'", key));
    }
  }

  auto pick = [&](const char* key, const char* env_name) -> std::optional<std::string> {
    if (auto v = env(env_name)) return v;
    if (auto it = file.find(key); it != file.end()) return it->second;
    return std::nullopt;
  };
  auto port_of = [](const std::string& v) {
    const long p = parse_long("port", v);
    if (p < 0 || p > 65535) throw InvalidArgument(fmt::format("port {} out of range", p));
    return static_cast<int>(p);
  };

  if (flags.host) {
    s.host = *flags.host;
  } else if (auto v = pick("host", "CFU_HOST")) {
    s.host = *v;
  }
  if (flags.port) {
    s.port = port_of(std::to_string(*flags.port));
  } else if (auto v = pick("port", "CFU_PORT")) {
    s.port = port_of(*v);
  }
  if (flags.data_dir) {
    s.data_dir = *flags.data_dir;
  } else if (auto v = pick("data_dir", "CFU_DATA_DIR")) {
    s.data_dir = *v;
  }
  if (flags.image_root) {
    s.image_root = *flags.image_root;
  } else if (auto v = pick("image_root", "CFU_IMAGE_ROOT")) {
    s.image_root = *v;
  }
  if (flags.jobs) {
    s.jobs = *flags.jobs;
  } else if (auto v = pick("jobs", "CFU_JOBS")) {
    s.jobs = static_cast<int>(parse_long("jobs", *v));
  }
  if (s.jobs < 0) throw InvalidArgument("jobs must be non-negative");
  return s;
}

}  // namespace cfu
