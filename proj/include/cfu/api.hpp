#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "cfu/store.hpp"

namespace cfu::api {

struct Request {
  std::string method;
  std::string path;  // e.g. /v1/datasets
  std::map<std::string, std::string> query;
  std::string body;
  std::string actor = "api";
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// Error body: {"status", "code", "message", "details"?}.
Response error_response(int status, std::string_view code, std::string_view message,
                        const nlohmann::ordered_json& details = nullptr);

struct ServiceOptions {
  std::filesystem::path image_root = ".";
  std::function<std::int64_t()> clock;  // unix ms; system clock when empty
};

// Routes every /v1 endpoint without touching sockets. Image, instance and
// experiment resource ids are "<dataset_id>.<local id>".
class Service {
 public:
  explicit Service(store::Store& store, ServiceOptions opts = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const Request& req);

 private:
  struct Job {
    std::string status = "queued";
    Response result;
  };

  Response route(const Request& req);
  Response post_dataset(const Request& req);
  Response list_datasets();
  Response get_dataset(const std::string& id);
  Response export_dataset(const std::string& id, const Request& req);
  Response list_events(const std::string& id);
  Response postprocess(const std::string& id, const Request& req);
  Response run_postprocess(const std::string& id, const std::string& body);
  Response evaluate(const std::string& id, const Request& req);
  Response list_instances(const std::string& image_ref, const Request& req);
  Response create_instance(const std::string& image_ref, const Request& req);
  Response put_ellipse(const std::string& image_ref, const Request& req);
  Response put_split(const std::string& image_ref, const Request& req);
  Response put_instance(const std::string& instance_ref, const Request& req);
  Response delete_instance(const std::string& instance_ref, const Request& req);
  Response put_dilutions(const std::string& experiment_ref, const Request& req);
  Response export_experiment(const std::string& experiment_ref, const Request& req);
  Response get_job(const std::string& job_id);

  store::EditEvent event(const std::string& actor, store::Payload p) const;

  store::Store& store_;
  ServiceOptions opts_;
  std::mutex jobs_mutex_;
  std::map<std::string, Job> jobs_;
  std::vector<std::thread> workers_;
  std::uint64_t next_job_ = 1;
};

// cpp-httplib front end forwarding to Service::handle.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  // Port 0 binds an ephemeral port. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cfu::api
