#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfu/geometry.hpp"

namespace cfu {

enum class ImageId : std::int64_t {};
enum class InstanceId : std::int64_t {};

constexpr std::int64_t raw(ImageId id) { return static_cast<std::int64_t>(id); }
constexpr std::int64_t raw(InstanceId id) { return static_cast<std::int64_t>(id); }

enum class ClassLabel : std::uint8_t { BVGMinus, BVGPlus };
inline constexpr ClassLabel kAllLabels[] = {ClassLabel::BVGMinus, ClassLabel::BVGPlus};

constexpr ClassLabel other(ClassLabel c) {
  return c == ClassLabel::BVGPlus ? ClassLabel::BVGMinus : ClassLabel::BVGPlus;
}
constexpr std::size_t index_of(ClassLabel c) { return static_cast<std::size_t>(c); }

enum class Origin : std::uint8_t { Model, User, GroundTruth };

enum class ExclusionReason : std::uint8_t {
  BelowScoreThreshold,
  CrossClassDuplicate,
  OutsideDish,
  AreaOutlier,
  UserDeleted,
};
inline constexpr std::size_t kExclusionReasonCount = 5;

enum class EllipseSource : std::uint8_t { None, Fitted, UserOverride };
enum class Split : std::uint8_t { Unsplit, Train, Val, Test };

// Wire names used by the interchange format, reports and the API.
std::string_view to_string(ClassLabel c);
std::string_view to_string(Origin o);
std::string_view to_string(ExclusionReason r);
std::string_view to_string(EllipseSource s);
std::string_view to_string(Split s);
std::optional<ClassLabel> parse_class_label(std::string_view s);
std::optional<Origin> parse_origin(std::string_view s);
std::optional<ExclusionReason> parse_exclusion_reason(std::string_view s);
std::optional<EllipseSource> parse_ellipse_source(std::string_view s);
std::optional<Split> parse_split(std::string_view s);

// Category ids of the interchange format.
constexpr int category_id(ClassLabel c) { return c == ClassLabel::BVGMinus ? 1 : 2; }
std::optional<ClassLabel> label_from_category(int id);

struct Instance {
  InstanceId id{};
  ImageId image_id{};
  ClassLabel label = ClassLabel::BVGPlus;
  double score = 1.0;
  BBox bbox;
  std::optional<RleMask> mask;
  bool unsure = false;
  std::optional<ClassLabel> alt_label;
  bool validated = false;
  Origin origin = Origin::Model;
  std::optional<ExclusionReason> excluded;

  bool kept() const { return !excluded.has_value(); }

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct ImageRecord {
  ImageId id{};
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::optional<std::string> pixel_data_ref;
  std::optional<EllipseModel> dish_ellipse;
  EllipseSource ellipse_source = EllipseSource::None;
  Split split = Split::Unsplit;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Dilution factor: fraction of the original concentration plated, in (0, 1].
struct DilutionFactor {
  double value = 1.0;
  friend bool operator==(const DilutionFactor&, const DilutionFactor&) = default;
};

struct TriplicateGroup {
  std::vector<ImageId> image_ids;
  DilutionFactor dilution;
  friend bool operator==(const TriplicateGroup&, const TriplicateGroup&) = default;
};

struct Experiment {
  std::string id;
  std::vector<TriplicateGroup> triplicates;
  std::int64_t created_at = 0;  // unix ms
  friend bool operator==(const Experiment&, const Experiment&) = default;
};

struct Dataset {
  std::string id;
  std::string name;
  std::vector<ImageRecord> images;
  std::vector<Instance> ground_truth;
  std::vector<Instance> predictions;
  std::vector<Experiment> experiments;

  const ImageRecord* find_image(ImageId id) const;
  ImageRecord* find_image(ImageId id);
  Instance* find_prediction(InstanceId id);
  const Instance* find_prediction(InstanceId id) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Violation {
  std::string entity;   // e.g. "instance 12", "image 3"
  std::string message;  // the broken invariant
  friend bool operator==(const Violation&, const Violation&) = default;
};

std::vector<Violation> validate_dataset(const Dataset& d);

// Geometry on instances: mask when present, bbox otherwise.
double instance_area(const Instance& inst);
// Mask IoU when both masks exist, box IoU otherwise.
double instance_iou(const Instance& p, const Instance& q);
bool instance_touches_ellipse(const Instance& inst, const EllipseModel& e);

// Instances of one image, preserving order.
std::vector<Instance> instances_of(const std::vector<Instance>& all, ImageId image);
// Buckets aligned with `images`; instances of unknown images are dropped.
std::vector<std::vector<Instance>> group_by_image(const std::vector<ImageRecord>& images,
                                                  const std::vector<Instance>& all);

}  // namespace cfu
