#include "cfu/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <fmt/format.h>

#include "cfu/error.hpp"
#include "cfu/image.hpp"
#include "cfu/interchange.hpp"

namespace cfu::store {

namespace {

using nlohmann::json;
using Json = nlohmann::ordered_json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Instance* find_editable(Dataset& d, InstanceId id) {
  Instance* inst = d.find_prediction(id);
  if (!inst) throw NotFound(fmt::format("instance {} not found", raw(id)));
  return inst;
}

ImageRecord* find_image(Dataset& d, ImageId id) {
  ImageRecord* img = d.find_image(id);
  if (!img) throw NotFound(fmt::format("image {} not found", raw(id)));
  return img;
}

bool id_in_use(const Dataset& d, InstanceId id) {
  auto same = [&](const Instance& i) { return i.id == id; };
  return std::any_of(d.ground_truth.begin(), d.ground_truth.end(), same) ||
         std::any_of(d.predictions.begin(), d.predictions.end(), same);
}

void check_triplicates(const Dataset& d, const std::vector<TriplicateGroup>& groups) {
  for (const auto& g : groups) {
    if (!(g.dilution.value > 0 && g.dilution.value <= 1)) {
      throw InvalidArgument(fmt::format("dilution {} outside (0, 1]", g.dilution.value));
    }
    for (auto id : g.image_ids) {
      if (!d.find_image(id)) throw NotFound(fmt::format("image {} not found", raw(id)));
    }
  }
}

Json config_json(const postproc::PostProcConfig& c) {
  return Json{{"score_threshold", c.score_threshold},
              {"dup_iou_threshold", c.dup_iou_threshold},
              {"ellipse_shrink", c.ellipse_shrink},
              {"laplace_ci", c.laplace_ci},
              {"min_instances_for_area_filter", c.min_instances_for_area_filter}};
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("/payload/") + key, "missing required field");
  return *it;
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string("/payload/") + key, "wrong type");
  }
}

postproc::PostProcConfig config_from(const json& j) {
  postproc::PostProcConfig c;
  c.score_threshold = get<double>(j, "score_threshold");
  c.dup_iou_threshold = get<double>(j, "dup_iou_threshold");
  c.ellipse_shrink = get<double>(j, "ellipse_shrink");
  c.laplace_ci = get<double>(j, "laplace_ci");
  c.min_instances_for_area_filter = get<int>(j, "min_instances_for_area_filter");
  return c;
}

ClassLabel label_from(const json& j, const char* key) {
  auto l = label_from_category(get<int>(j, key));
  if (!l) throw SchemaError(std::string("/payload/") + key, "unknown category id");
  return *l;
}

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(fmt::format("event log write failed: {}", std::strerror(errno)));
    }
    off += static_cast<std::size_t>(n);
  }
}

void append_durably(const std::filesystem::path& path, const std::string& data) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw Error(fmt::format("cannot open '{}': {}", path.string(), std::strerror(errno)));
  try {
    write_all(fd, data);
    if (::fsync(fd) != 0) throw Error(fmt::format("fsync failed: {}", std::strerror(errno)));
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

void reset_pipeline_flags(Instance& inst) {
  if (inst.excluded != ExclusionReason::UserDeleted) inst.excluded.reset();
  if (!inst.validated) {
    inst.unsure = false;
    inst.alt_label.reset();
  }
}

}  // namespace

std::string_view action_name(const Payload& p) {
  return std::visit(Overloaded{
                        [](const CreateInstance&) { return "CreateInstance"; },
                        [](const DeleteInstance&) { return "DeleteInstance"; },
                        [](const ChangeClass&) { return "ChangeClass"; },
                        [](const ValidateUnsure&) { return "ValidateUnsure"; },
                        [](const InvalidateUnsure&) { return "InvalidateUnsure"; },
                        [](const RestoreExcluded&) { return "RestoreExcluded"; },
                        [](const MoveEllipse&) { return "MoveEllipse"; },
                        [](const SetDilution&) { return "SetDilution"; },
                        [](const SetSplit&) { return "SetSplit"; },
                        [](const ApplyPostprocess&) { return "ApplyPostprocess"; },
                    },
                    p);
}

Json event_to_json(const EditEvent& e, const Dataset& context) {
  Json payload = std::visit(
      Overloaded{
          [&](const CreateInstance& p) {
            const ImageRecord* img = context.find_image(p.instance.image_id);
            if (!img) throw NotFound(fmt::format("image {} not found", raw(p.instance.image_id)));
            return Json{{"instance", interchange::instance_to_json(p.instance, *img)}};
          },
          [](const DeleteInstance& p) { return Json{{"id", raw(p.id)}}; },
          [](const ChangeClass& p) { return Json{{"id", raw(p.id)}, {"category_id", category_id(p.label)}}; },
          [](const ValidateUnsure& p) { return Json{{"id", raw(p.id)}}; },
          [](const InvalidateUnsure& p) { return Json{{"id", raw(p.id)}}; },
          [](const RestoreExcluded& p) { return Json{{"id", raw(p.id)}}; },
          [](const MoveEllipse& p) {
            return Json{{"image_id", raw(p.image)},
                        {"ellipse", interchange::ellipse_to_json(p.ellipse)},
                        {"source", to_string(p.source)}};
          },
          [](const SetDilution& p) {
            Experiment tmp{p.experiment_id, p.triplicates, 0};
            return Json{{"experiment_id", p.experiment_id},
                        {"triplicates", interchange::experiment_to_json(tmp)["triplicates"]}};
          },
          [](const SetSplit& p) { return Json{{"image_id", raw(p.image)}, {"split", to_string(p.split)}}; },
          [](const ApplyPostprocess& p) {
            Json ups = Json::array();
            for (const auto& u : p.updates) {
              ups.push_back({{"id", raw(u.id)},
                             {"excluded", u.excluded ? Json(to_string(*u.excluded)) : Json(nullptr)},
                             {"unsure", u.unsure},
                             {"alt_category_id", u.alt_label ? Json(category_id(*u.alt_label)) : Json(nullptr)}});
            }
            return Json{{"config", config_json(p.config)}, {"updates", std::move(ups)}};
          },
      },
      e.payload);
  return Json{{"seq", e.seq},
              {"actor", e.actor},
              {"timestamp", e.timestamp},
              {"action", action_name(e.payload)},
              {"payload", std::move(payload)}};
}

EditEvent event_from_json(const json& j, const Dataset& context) {
  if (!j.is_object()) throw SchemaError("", "event must be an object");
  EditEvent e;
  try {
    e.seq = j.value("seq", std::uint64_t{0});
    e.actor = j.value("actor", std::string());
    e.timestamp = j.value("timestamp", std::int64_t{0});
  } catch (const json::exception&) {
    throw SchemaError("", "seq, actor or timestamp has the wrong type");
  }
  auto it = j.find("action");
  if (it == j.end() || !it->is_string()) throw SchemaError("/action", "missing action");
  const std::string action = it->get<std::string>();
  auto pit = j.find("payload");
  if (pit == j.end() || !pit->is_object()) throw SchemaError("/payload", "missing payload object");
  const json& p = *pit;
  auto id = [&] { return InstanceId{get<std::int64_t>(p, "id")}; };

  if (action == "CreateInstance") {
    const json& inst = field(p, "instance");
    const ImageId img{inst.is_object() ? inst.value("image_id", std::int64_t{0}) : 0};
    const ImageRecord* rec = context.find_image(img);
    if (!rec) throw SchemaError("/payload/instance/image_id", "unknown image");
    e.payload = CreateInstance{interchange::instance_from_json(inst, *rec, "/payload/instance")};
  } else if (action == "DeleteInstance") {
    e.payload = DeleteInstance{id()};
  } else if (action == "ChangeClass") {
    e.payload = ChangeClass{id(), label_from(p, "category_id")};
  } else if (action == "ValidateUnsure") {
    e.payload = ValidateUnsure{id()};
  } else if (action == "InvalidateUnsure") {
    e.payload = InvalidateUnsure{id()};
  } else if (action == "RestoreExcluded") {
    e.payload = RestoreExcluded{id()};
  } else if (action == "MoveEllipse") {
    MoveEllipse m;
    m.image = ImageId{get<std::int64_t>(p, "image_id")};
    m.ellipse = interchange::ellipse_from_json(field(p, "ellipse"), "/payload/ellipse");
    auto src = parse_ellipse_source(get<std::string>(p, "source"));
    if (!src || *src == EllipseSource::None) throw SchemaError("/payload/source", "expected fitted or user_override");
    m.source = *src;
    e.payload = m;
  } else if (action == "SetDilution") {
    const std::string exp_id = get<std::string>(p, "experiment_id");
    json wrapped = {{"id", exp_id}, {"triplicates", field(p, "triplicates")}};
    e.payload = SetDilution{exp_id, interchange::experiment_from_json(wrapped, "/payload").triplicates};
  } else if (action == "SetSplit") {
    auto split = parse_split(get<std::string>(p, "split"));
    if (!split) throw SchemaError("/payload/split", "unknown split");
    e.payload = SetSplit{ImageId{get<std::int64_t>(p, "image_id")}, *split};
  } else if (action == "ApplyPostprocess") {
    ApplyPostprocess a;
    a.config = config_from(field(p, "config"));
    const json& ups = field(p, "updates");
    if (!ups.is_array()) throw SchemaError("/payload/updates", "expected an array");
    for (const auto& u : ups) {
      FlagUpdate f;
      f.id = InstanceId{get<std::int64_t>(u, "id")};
      const json& ex = field(u, "excluded");
      if (!ex.is_null()) {
        auto r = ex.is_string() ? parse_exclusion_reason(ex.get<std::string>()) : std::nullopt;
        if (!r) throw SchemaError("/payload/updates/excluded", "unknown exclusion reason");
        f.excluded = *r;
      }
      f.unsure = get<bool>(u, "unsure");
      if (!field(u, "alt_category_id").is_null()) f.alt_label = label_from(u, "alt_category_id");
      a.updates.push_back(f);
    }
    e.payload = std::move(a);
  } else {
    throw SchemaError("/action", fmt::format("unknown action '{}'", action));
  }
  return e;
}

void apply_event(Snapshot& s, const EditEvent& e) {
  Dataset& d = s.dataset;
  std::visit(
      Overloaded{
          [&](const CreateInstance& p) {
            const Instance& inst = p.instance;
            const ImageRecord* img = find_image(d, inst.image_id);
            if (inst.origin != Origin::User) throw InvalidArgument("created instances must have origin user");
            if (id_in_use(d, inst.id)) throw Conflict(fmt::format("instance id {} already exists", raw(inst.id)));
            Dataset probe;
            probe.images.push_back(*img);
            probe.predictions.push_back(inst);
            const auto violations = validate_dataset(probe);
            if (!violations.empty()) throw InvalidArgument(violations.front().message);
            d.predictions.push_back(inst);
          },
          [&](const DeleteInstance& p) {
            Instance* inst = find_editable(d, p.id);
            if (inst->excluded == ExclusionReason::UserDeleted) {
              throw Conflict(fmt::format("instance {} is already deleted", raw(p.id)));
            }
            inst->excluded = ExclusionReason::UserDeleted;
          },
          [&](const ChangeClass& p) {
            Instance* inst = find_editable(d, p.id);
            inst->label = p.label;
            inst->unsure = false;
            inst->alt_label.reset();
            inst->validated = true;
          },
          [&](const ValidateUnsure& p) {
            Instance* inst = find_editable(d, p.id);
            if (!inst->unsure) throw Conflict(fmt::format("instance {} is not unsure", raw(p.id)));
            inst->unsure = false;
            inst->alt_label.reset();
            inst->validated = true;
          },
          [&](const InvalidateUnsure& p) {
            Instance* inst = find_editable(d, p.id);
            if (!inst->unsure) throw Conflict(fmt::format("instance {} is not unsure", raw(p.id)));
            inst->label = *inst->alt_label;
            inst->unsure = false;
            inst->alt_label.reset();
            inst->validated = true;
          },
          [&](const RestoreExcluded& p) {
            Instance* inst = find_editable(d, p.id);
            if (inst->kept()) throw Conflict(fmt::format("instance {} is not excluded", raw(p.id)));
            inst->excluded.reset();
          },
          [&](const MoveEllipse& p) {
            ImageRecord* img = find_image(d, p.image);
            if (!p.ellipse.valid()) throw InvalidArgument("ellipse must satisfy a >= b > 0 and theta in [0, pi)");
            if (p.source == EllipseSource::None) throw InvalidArgument("ellipse source must be fitted or user_override");
            img->dish_ellipse = p.ellipse;
            img->ellipse_source = p.source;
          },
          [&](const SetDilution& p) {
            if (p.experiment_id.empty()) throw InvalidArgument("experiment id must not be empty");
            check_triplicates(d, p.triplicates);
            auto it = std::find_if(d.experiments.begin(), d.experiments.end(),
                                   [&](const Experiment& x) { return x.id == p.experiment_id; });
            if (it == d.experiments.end()) {
              d.experiments.push_back({p.experiment_id, p.triplicates, e.timestamp});
            } else {
              it->triplicates = p.triplicates;
            }
          },
          [&](const SetSplit& p) { find_image(d, p.image)->split = p.split; },
          [&](const ApplyPostprocess& p) {
            p.config.validate();
            std::vector<Instance*> targets;
            targets.reserve(p.updates.size());
            for (const auto& u : p.updates) {
              Instance* inst = find_editable(d, u.id);
              if (inst->origin != Origin::Model) {
                throw InvalidArgument(fmt::format("instance {} is not a model prediction", raw(u.id)));
              }
              if (u.unsure && (!u.alt_label || *u.alt_label == inst->label)) {
                throw InvalidArgument(fmt::format("instance {}: unsure needs a different alternative label", raw(u.id)));
              }
              targets.push_back(inst);
            }
            for (std::size_t i = 0; i < targets.size(); ++i) {
              targets[i]->excluded = p.updates[i].excluded;
              targets[i]->unsure = p.updates[i].unsure;
              targets[i]->alt_label = p.updates[i].alt_label;
            }
            s.last_postprocess = p.config;
          },
      },
      e.payload);
  s.seq = e.seq;
}

Snapshot replay(const Dataset& base, const std::vector<EditEvent>& events, std::optional<std::uint64_t> upto) {
  Snapshot s{base, 0, std::nullopt};
  for (const auto& e : events) {
    if (upto && e.seq > *upto) break;
    apply_event(s, e);
  }
  return s;
}

std::vector<FlagUpdate> pipeline_updates(const Dataset& d, const postproc::PostProcConfig& cfg) {
  cfg.validate();
  Dataset work = d;
  for (auto& inst : work.predictions) {
    if (inst.origin == Origin::Model) reset_pipeline_flags(inst);
  }
  const auto results = postproc::run_dataset(work, cfg);
  std::vector<FlagUpdate> out;
  for (const auto& r : results) {
    for (const auto& inst : r.instances) {
      if (inst.origin == Origin::Model) out.push_back({inst.id, inst.excluded, inst.unsure, inst.alt_label});
    }
  }
  return out;
}

std::vector<FlagUpdate> ellipse_updates(const Dataset& d, ImageId image, const EllipseModel& ellipse,
                                        const postproc::PostProcConfig& cfg) {
  cfg.validate();
  auto instances = instances_of(d.predictions, image);
  for (auto& inst : instances) {
    if (inst.origin == Origin::Model &&
        (inst.excluded == ExclusionReason::OutsideDish || inst.excluded == ExclusionReason::AreaOutlier)) {
      inst.excluded.reset();
    }
  }
  instances = postproc::filter_by_dish(std::move(instances), ellipse, cfg);
  instances = postproc::filter_area_outliers(std::move(instances), cfg);
  std::vector<FlagUpdate> out;
  for (const auto& inst : instances) {
    if (inst.origin == Origin::Model) out.push_back({inst.id, inst.excluded, inst.unsure, inst.alt_label});
  }
  return out;
}

std::vector<MoveEllipse> fit_missing_ellipses(const Dataset& d, const std::filesystem::path& image_root) {
  std::vector<MoveEllipse> out;
  for (const auto& img : d.images) {
    if (img.dish_ellipse) continue;
    if (!img.pixel_data_ref) {
      throw MissingEllipse(fmt::format("image {} has no dish ellipse and no pixel data to fit one", raw(img.id)));
    }
    const auto path = image_root / *img.pixel_data_ref;
    if (!std::filesystem::exists(path)) {
      throw MissingEllipse(fmt::format("image {} has no dish ellipse and '{}' is missing", raw(img.id), path.string()));
    }
    const GrayImage pixels = read_pgm(path);
    out.push_back({img.id, estimate_dish_ellipse(pixels).ellipse, EllipseSource::Fitted});
  }
  return out;
}

std::int64_t next_instance_id(const Dataset& d) {
  std::int64_t hi = 0;
  for (const auto& i : d.ground_truth) hi = std::max(hi, raw(i.id));
  for (const auto& i : d.predictions) hi = std::max(hi, raw(i.id));
  return hi + 1;
}

// --- Store -----------------------------------------------------------------

Store::Store(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
  std::vector<std::string> ids;
  for (const auto& dir : std::filesystem::directory_iterator(root_)) {
    if (dir.is_directory() && std::filesystem::exists(dir.path() / "base.json")) ids.push_back(dir.path().filename());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) load(id);
}

void Store::load(const std::string& id) {
  auto e = std::make_unique<Entry>();
  e->base = interchange::load_dataset(root_ / id / "base.json");
  e->latest = {e->base, 0, std::nullopt};
  const auto log_path = root_ / id / "events.ndjson";
  std::ifstream in(log_path);
  std::string line;
  std::optional<std::uintmax_t> torn_at;
  for (std::streamoff start = in.tellg(); std::getline(in, line); start = in.tellg()) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      if (in.peek() != EOF) throw SchemaError("/", fmt::format("corrupt event log for dataset {}", id));
      torn_at = static_cast<std::uintmax_t>(start);  // torn final write
      break;
    }
    EditEvent ev = event_from_json(j, e->base);
    apply_event(e->latest, ev);
    e->log.push_back(std::move(ev));
  }
  in.close();
  // Later appends must start on a fresh line.
  if (torn_at) std::filesystem::resize_file(log_path, *torn_at);
  if (id.size() > 2 && id.starts_with("ds")) {
    std::uint64_t n = 0;
    if (std::sscanf(id.c_str() + 2, "%lu", &n) == 1) next_dataset_ = std::max(next_dataset_, n + 1);
  }
  entries_.emplace(id, std::move(e));
}

std::string Store::create_dataset(Dataset base) {
  const auto violations = validate_dataset(base);
  if (!violations.empty()) {
    throw InvalidArgument(fmt::format("{}: {}", violations.front().entity, violations.front().message));
  }
  std::lock_guard lock(index_mutex_);
  std::string id;
  do {
    id = fmt::format("ds{}", next_dataset_++);
  } while (std::filesystem::exists(root_ / id));
  base.id = id;
  std::filesystem::create_directories(root_ / id);
  interchange::save_dataset(base, root_ / id / "base.json");
  append_durably(root_ / id / "events.ndjson", "");
  auto e = std::make_unique<Entry>();
  e->latest = {base, 0, std::nullopt};
  e->base = std::move(base);
  entries_.emplace(id, std::move(e));
  return id;
}

std::vector<std::string> Store::dataset_ids() const {
  std::lock_guard lock(index_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

bool Store::contains(const std::string& id) const {
  std::lock_guard lock(index_mutex_);
  return entries_.count(id) > 0;
}

Store::Entry& Store::entry(const std::string& id) const {
  std::lock_guard lock(index_mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw NotFound(fmt::format("dataset '{}' not found", id));
  return *it->second;
}

std::uint64_t Store::append(const std::string& id, std::vector<EditEvent> events) {
  Entry& e = entry(id);
  std::unique_lock lock(e.mutex);
  if (events.empty()) return e.latest.seq;
  Snapshot work = e.latest;
  std::string lines;
  for (auto& ev : events) {
    ev.seq = work.seq + 1;
    apply_event(work, ev);
    lines += event_to_json(ev, work.dataset).dump() + "\n";
  }
  append_durably(root_ / id / "events.ndjson", lines);
  for (auto& ev : events) e.log.push_back(std::move(ev));
  e.latest = std::move(work);
  return e.latest.seq;
}

std::uint64_t Store::append(const std::string& id, EditEvent event) {
  std::vector<EditEvent> v;
  v.push_back(std::move(event));
  return append(id, std::move(v));
}

Snapshot Store::materialize(const std::string& id, std::optional<std::uint64_t> upto) const {
  Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  if (!upto || *upto >= e.latest.seq) return e.latest;
  return replay(e.base, e.log, upto);
}

std::vector<EditEvent> Store::events(const std::string& id) const {
  Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  return e.log;
}

Dataset Store::base(const std::string& id) const {
  Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  return e.base;
}

}  // namespace cfu::store
