#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "cfu/error.hpp"
#include "cfu/settings.hpp"

using namespace cfu;
namespace fs = std::filesystem;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

fs::path write_config(const std::string& body) {
  const fs::path p = fs::temp_directory_path() / "cfu_test_settings.conf";
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_CASE("defaults") {
  const auto s = resolve_settings({}, env_of({}));
  CHECK(s.host == "127.0.0.1");
  CHECK(s.port == 8080);
  CHECK(s.data_dir == "data");
  CHECK(s.jobs == 0);
}

TEST_CASE("flag beats environment beats file") {
  const fs::path cfg = write_config("host = 0.0.0.0\nport = 9000\ndata_dir = /srv/file\njobs = 3\n");
  SettingsOverrides flags;
  flags.config = cfg;
  auto s = resolve_settings(flags, env_of({}));
  CHECK(s.host == "0.0.0.0");
  CHECK(s.port == 9000);
  CHECK(s.data_dir == "/srv/file");
  CHECK(s.jobs == 3);

  s = resolve_settings(flags, env_of({{"CFU_PORT", "9100"}, {"CFU_DATA_DIR", "/srv/env"}}));
  CHECK(s.port == 9100);
  CHECK(s.data_dir == "/srv/env");
  CHECK(s.host == "0.0.0.0");

  flags.port = 9200;
  s = resolve_settings(flags, env_of({{"CFU_PORT", "9100"}}));
  CHECK(s.port == 9200);

  s = resolve_settings({}, env_of({{"CFU_CONFIG", cfg.string()}}));
  CHECK(s.port == 9000);
  fs::remove(cfg);
}

TEST_CASE("invalid settings") {
  CHECK_THROWS_AS(resolve_settings({}, env_of({{"CFU_PORT", "70000"}})), InvalidArgument);
  CHECK_THROWS_AS(resolve_settings({}, env_of({{"CFU_PORT", "eighty"}})), InvalidArgument);
  CHECK_THROWS_AS(resolve_settings({}, env_of({{"CFU_JOBS", "-1"}})), InvalidArgument);
  const fs::path cfg = write_config("colour = blue\n");
  SettingsOverrides flags;
  flags.config = cfg;
  CHECK_THROWS_AS(resolve_settings(flags, env_of({})), InvalidArgument);
  fs::remove(cfg);
}
