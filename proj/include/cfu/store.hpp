#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfu/core.hpp"
#include "cfu/postproc.hpp"

namespace cfu::store {

// Pipeline-owned flags of one model prediction.
struct FlagUpdate {
  InstanceId id{};
  std::optional<ExclusionReason> excluded;
  bool unsure = false;
  std::optional<ClassLabel> alt_label;
  friend bool operator==(const FlagUpdate&, const FlagUpdate&) = default;
};

struct CreateInstance {
  Instance instance;  // origin User, score 1
  friend bool operator==(const CreateInstance&, const CreateInstance&) = default;
};
struct DeleteInstance {
  InstanceId id{};
  friend bool operator==(const DeleteInstance&, const DeleteInstance&) = default;
};
struct ChangeClass {
  InstanceId id{};
  ClassLabel label = ClassLabel::BVGPlus;
  friend bool operator==(const ChangeClass&, const ChangeClass&) = default;
};
struct ValidateUnsure {
  InstanceId id{};
  friend bool operator==(const ValidateUnsure&, const ValidateUnsure&) = default;
};
struct InvalidateUnsure {
  InstanceId id{};
  friend bool operator==(const InvalidateUnsure&, const InvalidateUnsure&) = default;
};
struct RestoreExcluded {
  InstanceId id{};
  friend bool operator==(const RestoreExcluded&, const RestoreExcluded&) = default;
};
struct MoveEllipse {
  ImageId image{};
  EllipseModel ellipse;
  EllipseSource source = EllipseSource::UserOverride;
  friend bool operator==(const MoveEllipse&, const MoveEllipse&) = default;
};
// Creates the experiment when it does not exist yet.
struct SetDilution {
  std::string experiment_id;
  std::vector<TriplicateGroup> triplicates;
  friend bool operator==(const SetDilution&, const SetDilution&) = default;
};
struct SetSplit {
  ImageId image{};
  Split split = Split::Unsplit;
  friend bool operator==(const SetSplit&, const SetSplit&) = default;
};
// Exclusion flags computed by a pipeline run, persisted as a system event.
struct ApplyPostprocess {
  postproc::PostProcConfig config;
  std::vector<FlagUpdate> updates;
  friend bool operator==(const ApplyPostprocess&, const ApplyPostprocess&) = default;
};

using Payload = std::variant<CreateInstance, DeleteInstance, ChangeClass, ValidateUnsure, InvalidateUnsure,
                             RestoreExcluded, MoveEllipse, SetDilution, SetSplit, ApplyPostprocess>;

struct EditEvent {
  std::uint64_t seq = 0;  // assigned on append
  std::string actor;
  std::int64_t timestamp = 0;  // unix ms
  Payload payload;
  friend bool operator==(const EditEvent&, const EditEvent&) = default;
};

std::string_view action_name(const Payload& p);

nlohmann::ordered_json event_to_json(const EditEvent& e, const Dataset& context);
// `context` supplies image sizes for created masks.
EditEvent event_from_json(const nlohmann::json& j, const Dataset& context);

struct Snapshot {
  Dataset dataset;
  std::uint64_t seq = 0;
  std::optional<postproc::PostProcConfig> last_postprocess;
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

// Pure fold step. Throws NotFound for dangling references, Conflict for
// state preconditions (e.g. validating a colony that is not unsure) and
// InvalidArgument for payloads that would break a dataset invariant. On
// throw `s` is unchanged.
void apply_event(Snapshot& s, const EditEvent& e);

Snapshot replay(const Dataset& base, const std::vector<EditEvent>& events,
                std::optional<std::uint64_t> upto = std::nullopt);

// Flags of a full pipeline run over every image. Flags of a previous run are
// cleared first; UserDeleted and user-validated labels are kept.
std::vector<FlagUpdate> pipeline_updates(const Dataset& d, const postproc::PostProcConfig& cfg);

// Stages 3-4 of one image recomputed for a new ellipse; stage 1-2 flags stay.
std::vector<FlagUpdate> ellipse_updates(const Dataset& d, ImageId image, const EllipseModel& ellipse,
                                        const postproc::PostProcConfig& cfg);

// Fits a dish ellipse from the referenced PGM for every image without one.
// Throws MissingEllipse when an image has no readable pixel data.
std::vector<MoveEllipse> fit_missing_ellipses(const Dataset& d, const std::filesystem::path& image_root);

std::int64_t next_instance_id(const Dataset& d);

// Directory layout: <root>/<dataset_id>/base.json and events.ndjson. Reads
// of one dataset run concurrently; appends to it are serialized.
class Store {
 public:
  explicit Store(std::filesystem::path root);
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Persists `base` under a fresh id and returns it.
  std::string create_dataset(Dataset base);
  std::vector<std::string> dataset_ids() const;
  bool contains(const std::string& id) const;

  // Validates against the latest snapshot, then appends durably (fsync)
  // all-or-nothing. Returns the seq of the last event.
  std::uint64_t append(const std::string& id, std::vector<EditEvent> events);
  std::uint64_t append(const std::string& id, EditEvent event);

  Snapshot materialize(const std::string& id, std::optional<std::uint64_t> upto = std::nullopt) const;
  std::vector<EditEvent> events(const std::string& id) const;
  Dataset base(const std::string& id) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  struct Entry {
    mutable std::shared_mutex mutex;
    Dataset base;
    std::vector<EditEvent> log;
    Snapshot latest;
  };
  Entry& entry(const std::string& id) const;
  void load(const std::string& id);

  std::filesystem::path root_;
  mutable std::mutex index_mutex_;
  std::map<std::string, std::unique_ptr<Entry>> entries_;
  std::uint64_t next_dataset_ = 1;
};

}  // namespace cfu::store
