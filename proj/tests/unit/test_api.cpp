#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cfu/api.hpp"
#include "cfu/interchange.hpp"
#include "cfu/synthbench.hpp"

using namespace cfu;
using namespace cfu::api;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  std::unique_ptr<store::Store> st;
  std::unique_ptr<Service> svc;
  synth::SynthDataset synth;
  std::string ds;

  explicit Fixture(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    st = std::make_unique<store::Store>(dir);
    svc = std::make_unique<Service>(*st, ServiceOptions{".", [] { return std::int64_t{1700000000000}; }});
    synth::SynthConfig cfg;
    cfg.seed = 17;
    cfg.width = cfg.height = 200;
    cfg.n_colonies = 15;
    cfg.perturbation = synth::planted_perturbation();
    synth = synth::generate_dataset(cfg, 3);
    const Response r = call("POST", "/v1/datasets", interchange::dump_dataset(synth.dataset));
    REQUIRE(r.status == 201);
    ds = json::parse(r.body)["dataset_id"];
  }
  ~Fixture() {
    svc.reset();
    fs::remove_all(dir);
  }

  Response call(const std::string& method, const std::string& path, const std::string& body = "",
                std::map<std::string, std::string> query = {}) {
    return svc->handle(Request{method, path, std::move(query), body, "tester"});
  }
  json ok(const std::string& method, const std::string& path, const std::string& body = "",
          std::map<std::string, std::string> query = {}) {
    const Response r = call(method, path, body, std::move(query));
    INFO(r.body);
    REQUIRE(r.status / 100 == 2);
    return json::parse(r.body);
  }
  std::string image(int k) const { return ds + "." + std::to_string(raw(synth.dataset.images[k].id)); }
};

}  // namespace

TEST_CASE("health and dataset listing") {
  Fixture f("cfu_test_api_list");
  CHECK(f.ok("GET", "/v1/health")["status"] == "ok");
  CHECK(f.ok("GET", "/v1/datasets")["datasets"] == json::array({f.ds}));
  const json d = f.ok("GET", "/v1/datasets/" + f.ds);
  CHECK(d["images"].size() == 3);
  CHECK(d["seq"] == 0);
  CHECK(d["images"][0]["resource_id"] == f.image(0));
}

TEST_CASE("postprocess then review edits") {
  Fixture f("cfu_test_api_review");
  const json pp = f.ok("POST", "/v1/datasets/" + f.ds + "/postprocess");
  CHECK(pp["seq"] == 1);
  std::size_t excluded = 0;
  for (const auto& [k, v] : pp["excluded"].items()) excluded += v.get<std::size_t>();
  CHECK(excluded == f.synth.planted_violations.size());

  const json kept = f.ok("GET", "/v1/images/" + f.image(0) + "/instances");
  const json all = f.ok("GET", "/v1/images/" + f.image(0) + "/instances", "", {{"include_excluded", "true"}});
  REQUIRE(kept["instances"].size() > 0);
  CHECK(all["instances"].size() >= kept["instances"].size());
  const std::string victim = kept["instances"][0]["resource_id"];

  CHECK(f.ok("DELETE", "/v1/instances/" + victim)["seq"] == 2);
  CHECK(f.call("DELETE", "/v1/instances/" + victim).status == 409);
  CHECK(f.ok("PUT", "/v1/instances/" + victim, R"({"action": "restore"})")["seq"] == 3);
  CHECK(f.ok("PUT", "/v1/instances/" + victim, R"({"category_id": 1})")["seq"] == 4);
  CHECK(f.call("PUT", "/v1/instances/" + victim, R"({"action": "validate"})").status == 409);
  CHECK(f.call("PUT", "/v1/instances/" + victim, R"({"action": "dance"})").status == 422);

  const json created =
      f.ok("POST", "/v1/images/" + f.image(1) + "/instances", R"({"category_id": 2, "bbox": [10, 10, 4, 4]})");
  CHECK(created["seq"] == 5);
  const json gt = f.ok("GET", "/v1/images/" + f.image(1) + "/instances", "", {{"source", "ground_truth"}});
  CHECK(gt["instances"].size() == 15);

  const json moved =
      f.ok("PUT", "/v1/images/" + f.image(2) + "/ellipse", R"({"cx": 100, "cy": 100, "a": 20, "b": 20, "theta": 0})");
  CHECK(moved["seq"] == 7);
  CHECK(moved["outside_dish"].get<int>() > 0);
  CHECK(f.ok("PUT", "/v1/images/" + f.image(2) + "/split", R"({"split": "val"})")["seq"] == 8);

  const json events = f.ok("GET", "/v1/datasets/" + f.ds + "/events");
  CHECK(events["events"].size() == 8);
  CHECK(events["events"][1]["action"] == "DeleteInstance");
  CHECK(events["events"][1]["actor"] == "tester");

  const Response at1 = f.call("GET", "/v1/datasets/" + f.ds + "/export", "", {{"seq", "1"}});
  CHECK(at1.status == 200);
  const Dataset snap1 = interchange::parse_dataset(at1.body);
  CHECK(snap1.find_prediction(InstanceId{std::stoll(victim.substr(victim.find('.') + 1))})->kept());
  CHECK(f.call("GET", "/v1/datasets/" + f.ds + "/export", "", {{"seq", "x"}}).status == 422);
}

TEST_CASE("experiments and quantification export") {
  Fixture f("cfu_test_api_quant");
  f.ok("POST", "/v1/datasets/" + f.ds + "/postprocess");
  const auto id = [&](int k) { return raw(f.synth.dataset.images[k].id); };
  const std::string two = json{{"triplicates", {{{"image_ids", {id(0), id(1)}}, {"dilution", 0.001}}}}}.dump();
  f.ok("PUT", "/v1/experiments/" + f.ds + ".exp/dilutions", two);
  Response r = f.call("GET", "/v1/experiments/" + f.ds + ".exp/export");
  CHECK(r.status == 409);
  CHECK(json::parse(r.body)["details"]["diagnostics"][0]["code"] == "image_count");

  const std::string three =
      json{{"triplicates", {{{"image_ids", {id(0), id(1), id(2)}}, {"dilution", 0.001}}}}}.dump();
  f.ok("PUT", "/v1/experiments/" + f.ds + ".exp/dilutions", three);
  r = f.call("GET", "/v1/experiments/" + f.ds + ".exp/export", "", {{"confidence", "0.9"}});
  CHECK(r.status == 200);
  CHECK(r.content_type == "text/csv");
  CHECK(r.body.find("exp,total,") != std::string::npos);
  CHECK(r.body.find(",0.9,3,") != std::string::npos);
  CHECK(f.call("GET", "/v1/experiments/" + f.ds + ".nope/export").status == 404);
  const std::string bad = json{{"triplicates", {{{"image_ids", {id(0)}}, {"dilution", 2.0}}}}}.dump();
  CHECK(f.call("PUT", "/v1/experiments/" + f.ds + ".exp/dilutions", bad).status == 422);
}

TEST_CASE("evaluation formats") {
  Fixture f("cfu_test_api_eval");
  f.ok("POST", "/v1/datasets/" + f.ds + "/postprocess");
  const Response table = f.call("POST", "/v1/datasets/" + f.ds + "/evaluate");
  CHECK(table.status == 200);
  CHECK(table.content_type == "text/plain");
  CHECK(table.body.rfind("Benchmarks (%)", 0) == 0);
  const json j = f.ok("POST", "/v1/datasets/" + f.ds + "/evaluate", R"({"format": "json", "iou_thresholds": [0.5]})");
  CHECK(j["map_at"].size() == 1);
  const json v = f.ok("POST", "/v1/datasets/" + f.ds + "/evaluate",
                      R"({"format": "json", "raters": [{"name": "gt", "kind": "user"},
                                                        {"name": "net", "kind": "model"}]})");
  CHECK(v["variability"]["pairs"].size() == 1);
  CHECK(f.call("POST", "/v1/datasets/" + f.ds + "/evaluate", R"({"bogus": 1})").status == 422);
  CHECK(f.call("POST", "/v1/datasets/" + f.ds + "/evaluate", R"({"splits": ["val"]})").status == 409);
}

TEST_CASE("error mapping") {
  Fixture f("cfu_test_api_errors");
  CHECK(f.call("GET", "/v2/health").status == 404);
  CHECK(f.call("PATCH", "/v1/datasets").status == 404);
  CHECK(f.call("GET", "/v1/datasets/ds42").status == 404);
  CHECK(f.call("GET", "/v1/images/nodot/instances").status == 404);
  CHECK(f.call("GET", "/v1/images/" + f.ds + ".x/instances").status == 404);

  const Response schema = f.call("POST", "/v1/datasets", R"({"images": [{"id": 1, "width": 3}]})");
  CHECK(schema.status == 422);
  const json body = json::parse(schema.body);
  CHECK(body["code"] == "schema_error");
  CHECK(body["details"]["path"] == "/images/0/height");
  CHECK(f.call("POST", "/v1/datasets", "{").status == 422);
  CHECK(f.call("POST", "/v1/datasets/" + f.ds + "/postprocess", R"({"laplace_ci": 2})").status == 422);
  CHECK(f.call("POST", "/v1/datasets/" + f.ds + "/postprocess", R"({"nope": 1})").status == 422);
}

TEST_CASE("missing ellipse without pixel data is a conflict") {
  Fixture f("cfu_test_api_ellipse");
  Dataset d = f.synth.dataset;
  for (auto& img : d.images) {
    img.dish_ellipse.reset();
    img.ellipse_source = EllipseSource::None;
    img.pixel_data_ref.reset();
  }
  const json created = json::parse(f.call("POST", "/v1/datasets", interchange::dump_dataset(d)).body);
  const Response r = f.call("POST", "/v1/datasets/" + created["dataset_id"].get<std::string>() + "/postprocess");
  CHECK(r.status == 409);
  CHECK(json::parse(r.body)["code"] == "missing_ellipse");
}

TEST_CASE("async postprocess job") {
  Fixture f("cfu_test_api_job");
  const Response r = f.call("POST", "/v1/datasets/" + f.ds + "/postprocess", "", {{"async", "true"}});
  CHECK(r.status == 202);
  const std::string job = json::parse(r.body)["job_id"];
  json status;
  for (int k = 0; k < 500; ++k) {
    status = f.ok("GET", "/v1/jobs/" + job);
    if (status["status"] == "done" || status["status"] == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  CHECK(status["status"] == "done");
  CHECK(status["result"]["seq"] == 1);
  CHECK(f.call("GET", "/v1/jobs/job999").status == 404);
}

TEST_CASE("http front end forwards to the service") {
  Fixture f("cfu_test_api_http");
  HttpServer server(*f.svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  for (int k = 0; k < 100; ++k) {
    if (client.Get("/v1/health")) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  auto health = client.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  httplib::Headers headers{{"X-Actor", "carol"}};
  auto pp = client.Post("/v1/datasets/" + f.ds + "/postprocess", headers, "", "application/json");
  REQUIRE(pp);
  CHECK(pp->status == 200);
  auto missing = client.Get("/v1/datasets/ds99");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto events = client.Get("/v1/datasets/" + f.ds + "/events");
  REQUIRE(events);
  CHECK(json::parse(events->body)["events"][0]["actor"] == "system");
  server.stop();
  t.join();
}
