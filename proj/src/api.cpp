#include "cfu/api.hpp"

#include <charconv>
#include <chrono>

#include <fmt/format.h>
#include <httplib.h>

#include "cfu/error.hpp"
#include "cfu/interchange.hpp"
#include "cfu/report.hpp"
#include "cfu/workflow.hpp"

namespace cfu::api {

namespace {

using nlohmann::json;
using Json = nlohmann::ordered_json;

Response json_response(int status, const Json& body) { return {status, "application/json", body.dump(2) + "\n"}; }

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw SchemaError("", fmt::format("malformed JSON body at byte {}", e.byte));
  }
}

struct Ref {
  std::string dataset;
  std::string local;
};

Ref split_ref(const std::string& ref, std::string_view kind) {
  const auto dot = ref.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == ref.size()) {
    throw NotFound(fmt::format("{} '{}' not found", kind, ref));
  }
  return {ref.substr(0, dot), ref.substr(dot + 1)};
}

std::int64_t local_int(const Ref& r, std::string_view kind) {
  std::int64_t v = 0;
  const auto* end = r.local.data() + r.local.size();
  auto [p, ec] = std::from_chars(r.local.data(), end, v);
  if (ec != std::errc() || p != end) throw NotFound(fmt::format("{} '{}.{}' not found", kind, r.dataset, r.local));
  return v;
}

std::string resource(const std::string& dataset, std::int64_t local) { return fmt::format("{}.{}", dataset, local); }

bool query_flag(const Request& req, const char* key) {
  auto it = req.query.find(key);
  return it != req.query.end() && (it->second == "true" || it->second == "1");
}

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const auto j = path.find('/', i);
    const auto end = j == std::string::npos ? path.size() : j;
    if (end > i) out.push_back(path.substr(i, end - i));
    i = end;
  }
  return out;
}

Json image_summary(const std::string& ds, const ImageRecord& img) {
  Json j{{"resource_id", resource(ds, raw(img.id))},
         {"id", raw(img.id)},
         {"width", img.width},
         {"height", img.height},
         {"split", to_string(img.split)},
         {"ellipse_source", to_string(img.ellipse_source)}};
  j["dish_ellipse"] = img.dish_ellipse ? interchange::ellipse_to_json(*img.dish_ellipse) : Json(nullptr);
  return j;
}

Json kept_counts(const Dataset& d) {
  std::int64_t minus = 0, plus = 0, unsure = 0;
  for (const auto& p : d.predictions) {
    if (!p.kept()) continue;
    (p.label == ClassLabel::BVGMinus ? minus : plus) += 1;
    if (p.unsure) ++unsure;
  }
  return Json{{"BVG-", minus}, {"BVG+", plus}, {"total", minus + plus}, {"unsure", unsure}};
}

}  // namespace

Response error_response(int status, std::string_view code, std::string_view message, const Json& details) {
  Json body{{"status", status}, {"code", code}, {"message", message}};
  if (!details.is_null()) body["details"] = details;
  return json_response(status, body);
}

Service::Service(store::Store& store, ServiceOptions opts) : store_(store), opts_(std::move(opts)) {
  if (!opts_.clock) {
    opts_.clock = [] {
      return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
    };
  }
}

Service::~Service() {
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

store::EditEvent Service::event(const std::string& actor, store::Payload p) const {
  return store::EditEvent{0, actor, opts_.clock(), std::move(p)};
}

Response Service::handle(const Request& req) {
  try {
    return route(req);
  } catch (const SchemaError& e) {
    return error_response(422, "schema_error", e.what(), Json{{"path", e.path()}});
  } catch (const MissingEllipse& e) {
    return error_response(409, "missing_ellipse", e.what());
  } catch (const Conflict& e) {
    return error_response(409, "conflict", e.what());
  } catch (const NotFound& e) {
    return error_response(404, "not_found", e.what());
  } catch (const InvalidArgument& e) {
    return error_response(422, "invalid_argument", e.what());
  } catch (const GeometryError& e) {
    return error_response(422, "invalid_geometry", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

Response Service::route(const Request& req) {
  const auto seg = segments(req.path);
  const std::string& m = req.method;
  if (seg.empty() || seg[0] != "v1") return error_response(404, "not_found", "unknown route");
  const std::size_t n = seg.size();
  auto is = [&](std::size_t i, const char* s) { return n > i && seg[i] == s; };

  if (n == 2 && is(1, "health") && m == "GET") return json_response(200, Json{{"status", "ok"}});
  if (is(1, "datasets")) {
    if (n == 2 && m == "POST") return post_dataset(req);
    if (n == 2 && m == "GET") return list_datasets();
    if (n == 3 && m == "GET") return get_dataset(seg[2]);
    if (n == 4 && seg[3] == "export" && m == "GET") return export_dataset(seg[2], req);
    if (n == 4 && seg[3] == "events" && m == "GET") return list_events(seg[2]);
    if (n == 4 && seg[3] == "postprocess" && m == "POST") return postprocess(seg[2], req);
    if (n == 4 && seg[3] == "evaluate" && m == "POST") return evaluate(seg[2], req);
  }
  if (is(1, "images") && n == 4) {
    if (seg[3] == "instances" && m == "GET") return list_instances(seg[2], req);
    if (seg[3] == "instances" && m == "POST") return create_instance(seg[2], req);
    if (seg[3] == "ellipse" && m == "PUT") return put_ellipse(seg[2], req);
    if (seg[3] == "split" && m == "PUT") return put_split(seg[2], req);
  }
  if (is(1, "instances") && n == 3) {
    if (m == "PUT") return put_instance(seg[2], req);
    if (m == "DELETE") return delete_instance(seg[2], req);
  }
  if (is(1, "experiments") && n == 4) {
    if (seg[3] == "dilutions" && m == "PUT") return put_dilutions(seg[2], req);
    if (seg[3] == "export" && m == "GET") return export_experiment(seg[2], req);
  }
  if (is(1, "jobs") && n == 3 && m == "GET") return get_job(seg[2]);
  return error_response(404, "not_found", fmt::format("no route for {} {}", m, req.path));
}

Response Service::post_dataset(const Request& req) {
  Dataset d = interchange::parse_dataset(req.body);
  const std::string id = store_.create_dataset(std::move(d));
  return json_response(201, Json{{"dataset_id", id}});
}

Response Service::list_datasets() {
  Json ids = Json::array();
  for (const auto& id : store_.dataset_ids()) ids.push_back(id);
  return json_response(200, Json{{"datasets", ids}});
}

Response Service::get_dataset(const std::string& id) {
  const auto snap = store_.materialize(id);
  Json images = Json::array();
  for (const auto& img : snap.dataset.images) images.push_back(image_summary(id, img));
  Json exps = Json::array();
  for (const auto& e : snap.dataset.experiments) exps.push_back(fmt::format("{}.{}", id, e.id));
  return json_response(200, Json{{"id", id},
                                 {"name", snap.dataset.name},
                                 {"seq", snap.seq},
                                 {"images", images},
                                 {"experiments", exps},
                                 {"ground_truth", snap.dataset.ground_truth.size()},
                                 {"predictions", snap.dataset.predictions.size()},
                                 {"kept", kept_counts(snap.dataset)}});
}

Response Service::export_dataset(const std::string& id, const Request& req) {
  std::optional<std::uint64_t> upto;
  if (auto it = req.query.find("seq"); it != req.query.end()) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || p != it->second.data() + it->second.size()) throw InvalidArgument("seq must be an integer");
    upto = v;
  }
  return {200, "application/json", interchange::dump_dataset(store_.materialize(id, upto).dataset)};
}

Response Service::list_events(const std::string& id) {
  const auto snap = store_.materialize(id);
  Json evs = Json::array();
  for (const auto& e : store_.events(id)) evs.push_back(store::event_to_json(e, snap.dataset));
  return json_response(200, Json{{"events", evs}});
}

Response Service::run_postprocess(const std::string& id, const std::string& body) {
  const json overrides = parse_body(body);
  if (!overrides.is_object()) throw InvalidArgument("postprocess options must be an object");
  KeyValues kv;
  for (const auto& [key, value] : overrides.items()) {
    if (!value.is_number()) throw InvalidArgument(fmt::format("{} must be a number", key));
    kv[key] = value.dump();
  }
  const auto cfg = postproc::config_from_key_values(kv);
  auto snap = store_.materialize(id);
  std::vector<store::EditEvent> events;
  for (auto& fit : store::fit_missing_ellipses(snap.dataset, opts_.image_root)) {
    snap.dataset.find_image(fit.image)->dish_ellipse = fit.ellipse;
    snap.dataset.find_image(fit.image)->ellipse_source = fit.source;
    events.push_back(event("system", fit));
  }
  events.push_back(event("system", store::ApplyPostprocess{cfg, store::pipeline_updates(snap.dataset, cfg)}));
  const auto seq = store_.append(id, std::move(events));
  const auto after = store_.materialize(id, seq);
  Json body_json = report::postproc_summary_json(report::summarize(after.dataset));
  body_json["seq"] = seq;
  return json_response(200, body_json);
}

Response Service::postprocess(const std::string& id, const Request& req) {
  if (!store_.contains(id)) throw NotFound(fmt::format("dataset '{}' not found", id));
  if (!query_flag(req, "async")) return run_postprocess(id, req.body);
  std::string job_id;
  {
    std::lock_guard lock(jobs_mutex_);
    job_id = fmt::format("job{}", next_job_++);
    jobs_[job_id] = Job{};
    workers_.emplace_back([this, job_id, id, body = req.body, actor = req.actor] {
      {
        std::lock_guard l(jobs_mutex_);
        jobs_[job_id].status = "running";
      }
      Request inner{"POST", "/v1/datasets/" + id + "/postprocess", {}, body, actor};
      Response r = handle(inner);
      std::lock_guard l(jobs_mutex_);
      jobs_[job_id].status = r.status == 200 ? "done" : "failed";
      jobs_[job_id].result = std::move(r);
    });
  }
  return json_response(202, Json{{"job_id", job_id}, {"status_url", "/v1/jobs/" + job_id}});
}

Response Service::get_job(const std::string& job_id) {
  std::lock_guard lock(jobs_mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw NotFound(fmt::format("job '{}' not found", job_id));
  Json body{{"job_id", job_id}, {"status", it->second.status}};
  if (it->second.status == "done" || it->second.status == "failed") {
    body["result_status"] = it->second.result.status;
    body["result"] = Json::parse(it->second.result.body);
  }
  return json_response(200, body);
}

Response Service::evaluate(const std::string& id, const Request& req) {
  const json body = parse_body(req.body);
  workflow::EvalRequest er = workflow::eval_request_from_json(body);
  report::Format fmt_kind = report::Format::Table;
  if (body.contains("format")) {
    auto f = body["format"].is_string() ? report::parse_format(body["format"].get<std::string>()) : std::nullopt;
    if (!f) throw InvalidArgument("format must be table or json");
    fmt_kind = *f;
  }
  const auto snap = store_.materialize(id);
  std::vector<Dataset> rater_data;
  if (body.contains("raters")) {
    const json& raters = body["raters"];
    if (!raters.is_array()) throw InvalidArgument("raters must be an array");
    rater_data.reserve(raters.size());
    for (const auto& r : raters) {
      if (!r.is_object()) throw InvalidArgument("rater must be an object");
      const std::string ds = r.value("dataset", id);
      rater_data.push_back(ds == id ? snap.dataset : store_.materialize(ds).dataset);
    }
    for (std::size_t i = 0; i < raters.size(); ++i) {
      const json& r = raters[i];
      workflow::RaterSource src;
      src.name = r.value("name", fmt::format("rater{}", i + 1));
      const std::string kind = r.value("kind", "user");
      if (kind != "user" && kind != "model") throw InvalidArgument("rater kind must be user or model");
      src.kind = kind == "model" ? eval::RaterKind::Model : eval::RaterKind::User;
      const std::string source = r.value("source", kind == "model" ? "predictions" : "ground_truth");
      if (source != "predictions" && source != "ground_truth") {
        throw InvalidArgument("rater source must be predictions or ground_truth");
      }
      src.predictions = source == "predictions";
      src.dataset = &rater_data[i];
      er.raters.push_back(src);
    }
  }
  const auto report = workflow::evaluate_datasets(snap.dataset, snap.dataset, er);
  return {200, fmt_kind == report::Format::Json ? "application/json" : "text/plain",
          report::render_eval_report(report, fmt_kind)};
}

Response Service::list_instances(const std::string& image_ref, const Request& req) {
  const Ref r = split_ref(image_ref, "image");
  const ImageId img{local_int(r, "image")};
  const auto snap = store_.materialize(r.dataset);
  const ImageRecord* rec = snap.dataset.find_image(img);
  if (!rec) throw NotFound(fmt::format("image '{}' not found", image_ref));
  const bool include_excluded = query_flag(req, "include_excluded");
  auto it = req.query.find("source");
  const bool gt = it != req.query.end() && it->second == "ground_truth";
  std::vector<Instance> list = instances_of(gt ? snap.dataset.ground_truth : snap.dataset.predictions, img);
  std::sort(list.begin(), list.end(), [](const Instance& a, const Instance& b) { return raw(a.id) < raw(b.id); });
  Json arr = Json::array();
  for (const auto& inst : list) {
    if (!include_excluded && !inst.kept()) continue;
    Json j = interchange::instance_to_json(inst, *rec);
    j["resource_id"] = resource(r.dataset, raw(inst.id));
    j["area"] = instance_area(inst);
    arr.push_back(std::move(j));
  }
  return json_response(200, Json{{"image_id", image_ref}, {"seq", snap.seq}, {"instances", arr}});
}

Response Service::create_instance(const std::string& image_ref, const Request& req) {
  const Ref r = split_ref(image_ref, "image");
  const ImageId img{local_int(r, "image")};
  json body = parse_body(req.body);
  if (!body.is_object()) throw SchemaError("", "expected an object");
  for (int attempt = 0;; ++attempt) {
    const auto snap = store_.materialize(r.dataset);
    const ImageRecord* rec = snap.dataset.find_image(img);
    if (!rec) throw NotFound(fmt::format("image '{}' not found", image_ref));
    json doc = body;
    doc["id"] = store::next_instance_id(snap.dataset);
    doc["image_id"] = raw(img);
    doc["origin"] = "user";
    doc["score"] = 1.0;
    Instance inst = interchange::instance_from_json(doc, *rec, "");
    const auto id = raw(inst.id);
    try {
      const auto seq = store_.append(r.dataset, event(req.actor, store::CreateInstance{std::move(inst)}));
      return json_response(201, Json{{"id", resource(r.dataset, id)}, {"seq", seq}});
    } catch (const Conflict&) {
      if (attempt >= 3) throw;
    }
  }
}

Response Service::put_ellipse(const std::string& image_ref, const Request& req) {
  const Ref r = split_ref(image_ref, "image");
  const ImageId img{local_int(r, "image")};
  const EllipseModel e = interchange::ellipse_from_json(parse_body(req.body), "");
  auto snap = store_.materialize(r.dataset);
  if (!snap.dataset.find_image(img)) throw NotFound(fmt::format("image '{}' not found", image_ref));
  std::vector<store::EditEvent> events;
  events.push_back(event(req.actor, store::MoveEllipse{img, e, EllipseSource::UserOverride}));
  if (snap.last_postprocess) {
    events.push_back(event("system", store::ApplyPostprocess{*snap.last_postprocess,
                                                             store::ellipse_updates(snap.dataset, img, e,
                                                                                    *snap.last_postprocess)}));
  }
  const auto seq = store_.append(r.dataset, std::move(events));
  const auto after = store_.materialize(r.dataset, seq);
  std::int64_t kept = 0, outside = 0;
  for (const auto& p : instances_of(after.dataset.predictions, img)) {
    if (p.kept()) ++kept;
    if (p.excluded == ExclusionReason::OutsideDish) ++outside;
  }
  return json_response(200, Json{{"seq", seq}, {"kept", kept}, {"outside_dish", outside}});
}

Response Service::put_split(const std::string& image_ref, const Request& req) {
  const Ref r = split_ref(image_ref, "image");
  const json body = parse_body(req.body);
  auto split = body.contains("split") && body["split"].is_string() ? parse_split(body["split"].get<std::string>())
                                                                   : std::nullopt;
  if (!split) throw SchemaError("/split", "expected train, val, test or unsplit");
  const auto seq = store_.append(r.dataset, event(req.actor, store::SetSplit{ImageId{local_int(r, "image")}, *split}));
  return json_response(200, Json{{"seq", seq}});
}

Response Service::put_instance(const std::string& instance_ref, const Request& req) {
  const Ref r = split_ref(instance_ref, "instance");
  const InstanceId id{local_int(r, "instance")};
  const json body = parse_body(req.body);
  if (!body.is_object()) throw SchemaError("", "expected an object");
  store::Payload payload;
  if (body.contains("action")) {
    const auto action = body["action"].is_string() ? body["action"].get<std::string>() : std::string();
    if (action == "validate") {
      payload = store::ValidateUnsure{id};
    } else if (action == "invalidate") {
      payload = store::InvalidateUnsure{id};
    } else if (action == "restore") {
      payload = store::RestoreExcluded{id};
    } else {
      throw SchemaError("/action", "expected validate, invalidate or restore");
    }
  } else if (body.contains("category_id")) {
    auto label = body["category_id"].is_number_integer() ? label_from_category(body["category_id"].get<int>())
                                                         : std::nullopt;
    if (!label) throw SchemaError("/category_id", "unknown category id");
    payload = store::ChangeClass{id, *label};
  } else {
    throw SchemaError("", "expected \"action\" or \"category_id\"");
  }
  const auto seq = store_.append(r.dataset, event(req.actor, std::move(payload)));
  return json_response(200, Json{{"seq", seq}});
}

Response Service::delete_instance(const std::string& instance_ref, const Request& req) {
  const Ref r = split_ref(instance_ref, "instance");
  const auto seq = store_.append(r.dataset, event(req.actor, store::DeleteInstance{InstanceId{local_int(r, "instance")}}));
  return json_response(200, Json{{"seq", seq}});
}

Response Service::put_dilutions(const std::string& experiment_ref, const Request& req) {
  const Ref r = split_ref(experiment_ref, "experiment");
  json body = parse_body(req.body);
  if (!body.is_object()) throw SchemaError("", "expected an object");
  json wrapped = {{"id", r.local}, {"triplicates", body.contains("triplicates") ? body["triplicates"] : json()}};
  const Experiment e = interchange::experiment_from_json(wrapped, "");
  const auto seq = store_.append(r.dataset, event(req.actor, store::SetDilution{e.id, e.triplicates}));
  return json_response(200, Json{{"seq", seq}, {"experiment_id", experiment_ref}});
}

Response Service::export_experiment(const std::string& experiment_ref, const Request& req) {
  const Ref r = split_ref(experiment_ref, "experiment");
  double level = 0.95;
  if (auto it = req.query.find("confidence"); it != req.query.end()) level = parse_double("confidence", it->second);
  const auto snap = store_.materialize(r.dataset);
  const auto result = workflow::export_experiment(snap.dataset, r.local, level);
  if (!result.csv) {
    return error_response(409, "invalid_experiment", "experiment has blocking validation errors",
                          Json{{"diagnostics", workflow::diagnostics_json(result.diagnostics)}});
  }
  return {200, "text/csv", *result.csv};
}

// --- HTTP ------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto forward = [this](const httplib::Request& hreq, httplib::Response& hres) {
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query[k] = v;
    req.body = hreq.body;
    if (hreq.has_header("X-Actor")) req.actor = hreq.get_header_value("X-Actor");
    const Response res = impl_->service.handle(req);
    hres.status = res.status;
    hres.set_content(res.body, res.content_type);
  };
  const std::string pattern = "/v1/.*";
  impl_->server.Get(pattern, forward);
  impl_->server.Post(pattern, forward);
  impl_->server.Put(pattern, forward);
  impl_->server.Delete(pattern, forward);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace cfu::api
