#include "cfu/core.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace cfu {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::pair<E, std::string_view> (&table)[N], std::string_view s) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::pair<E, std::string_view> (&table)[N], E v) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::pair<ClassLabel, std::string_view> kLabels[] = {
    {ClassLabel::BVGMinus, "BVG-"}, {ClassLabel::BVGPlus, "BVG+"}};
constexpr std::pair<Origin, std::string_view> kOrigins[] = {
    {Origin::Model, "model"}, {Origin::User, "user"}, {Origin::GroundTruth, "ground_truth"}};
constexpr std::pair<ExclusionReason, std::string_view> kReasons[] = {
    {ExclusionReason::BelowScoreThreshold, "below_score_threshold"},
    {ExclusionReason::CrossClassDuplicate, "cross_class_duplicate"},
    {ExclusionReason::OutsideDish, "outside_dish"},
    {ExclusionReason::AreaOutlier, "area_outlier"},
    {ExclusionReason::UserDeleted, "user_deleted"}};
constexpr std::pair<EllipseSource, std::string_view> kSources[] = {
    {EllipseSource::None, "none"}, {EllipseSource::Fitted, "fitted"}, {EllipseSource::UserOverride, "user_override"}};
constexpr std::pair<Split, std::string_view> kSplits[] = {
    {Split::Unsplit, "unsplit"}, {Split::Train, "train"}, {Split::Val, "val"}, {Split::Test, "test"}};

}  // namespace

std::string_view to_string(ClassLabel c) { return name_of(kLabels, c); }
std::string_view to_string(Origin o) { return name_of(kOrigins, o); }
std::string_view to_string(ExclusionReason r) { return name_of(kReasons, r); }
std::string_view to_string(EllipseSource s) { return name_of(kSources, s); }
std::string_view to_string(Split s) { return name_of(kSplits, s); }
std::optional<ClassLabel> parse_class_label(std::string_view s) { return lookup(kLabels, s); }
std::optional<Origin> parse_origin(std::string_view s) { return lookup(kOrigins, s); }
std::optional<ExclusionReason> parse_exclusion_reason(std::string_view s) { return lookup(kReasons, s); }
std::optional<EllipseSource> parse_ellipse_source(std::string_view s) { return lookup(kSources, s); }
std::optional<Split> parse_split(std::string_view s) { return lookup(kSplits, s); }

std::optional<ClassLabel> label_from_category(int id) {
  if (id == 1) return ClassLabel::BVGMinus;
  if (id == 2) return ClassLabel::BVGPlus;
  return std::nullopt;
}

const ImageRecord* Dataset::find_image(ImageId id) const {
  auto it = std::find_if(images.begin(), images.end(), [&](const ImageRecord& r) { return r.id == id; });
  return it == images.end() ? nullptr : &*it;
}

ImageRecord* Dataset::find_image(ImageId id) {
  return const_cast<ImageRecord*>(std::as_const(*this).find_image(id));
}

const Instance* Dataset::find_prediction(InstanceId id) const {
  auto it = std::find_if(predictions.begin(), predictions.end(), [&](const Instance& i) { return i.id == id; });
  return it == predictions.end() ? nullptr : &*it;
}

Instance* Dataset::find_prediction(InstanceId id) {
  return const_cast<Instance*>(std::as_const(*this).find_prediction(id));
}

std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  auto add = [&](std::string entity, std::string msg) { out.push_back({std::move(entity), std::move(msg)}); };

  std::unordered_map<ImageId, const ImageRecord*> images;
  for (const auto& img : d.images) {
    const std::string ent = fmt::format("image {}", raw(img.id));
    if (!images.emplace(img.id, &img).second) add(ent, "duplicate image id");
    if (img.width == 0 || img.height == 0) add(ent, "width and height must be positive");
    if (img.ellipse_source != EllipseSource::None && !img.dish_ellipse) {
      add(ent, "ellipse source set but no dish ellipse");
    }
    if (img.dish_ellipse && !img.dish_ellipse->valid()) add(ent, "dish ellipse violates a >= b > 0, theta in [0, pi)");
  }

  std::unordered_set<InstanceId> ids;
  auto check = [&](const Instance& inst, bool ground_truth) {
    const std::string ent = fmt::format("instance {}", raw(inst.id));
    if (!ids.insert(inst.id).second) add(ent, "duplicate instance id");
    if (ground_truth && inst.origin != Origin::GroundTruth) add(ent, "ground-truth list holds a non ground-truth origin");
    if (!ground_truth && inst.origin == Origin::GroundTruth) add(ent, "prediction list holds a ground-truth origin");
    if (!(inst.score >= 0.0 && inst.score <= 1.0)) add(ent, "score out of range");
    if (inst.origin != Origin::Model && inst.score != 1.0) add(ent, "non-model instance must have score 1.0");
    if (inst.unsure && (!inst.alt_label || *inst.alt_label == inst.label)) {
      add(ent, "unsure instance needs an alternative label different from its label");
    }
    if (!inst.bbox.valid()) add(ent, "degenerate bbox");
    auto it = images.find(inst.image_id);
    if (it == images.end()) {
      add(ent, "dangling image reference");
      return;
    }
    const ImageRecord& img = *it->second;
    if (inst.bbox.x_min < 0 || inst.bbox.y_min < 0 || inst.bbox.x_max > img.width || inst.bbox.y_max > img.height) {
      add(ent, "bbox outside image bounds");
    }
    if (inst.mask) {
      if (inst.mask->width != img.width || inst.mask->height != img.height) {
        add(ent, "mask dimensions differ from image");
      } else if (!well_formed(*inst.mask)) {
        add(ent, "mask run lengths do not cover the image");
      } else {
        const auto tight = tight_bbox(*inst.mask);
        if (!tight) {
          add(ent, "empty mask");
        } else if (!(*tight == inst.bbox)) {
          add(ent, "bbox differs from the mask's tight bounding box");
        }
      }
    }
  };
  for (const auto& inst : d.ground_truth) check(inst, true);
  for (const auto& inst : d.predictions) check(inst, false);

  for (const auto& exp : d.experiments) {
    for (const auto& tri : exp.triplicates) {
      for (auto id : tri.image_ids) {
        if (!images.count(id)) add(fmt::format("experiment {}", exp.id), "dangling image reference");
      }
    }
  }
  return out;
}

double instance_area(const Instance& inst) {
  return inst.mask ? static_cast<double>(mask_area(*inst.mask)) : inst.bbox.area();
}

double instance_iou(const Instance& p, const Instance& q) {
  if (p.mask && q.mask) return iou_mask(*p.mask, *q.mask);
  return iou_bbox(p.bbox, q.bbox);
}

bool instance_touches_ellipse(const Instance& inst, const EllipseModel& e) {
  return region_touches_ellipse(inst.mask, inst.bbox, e);
}

std::vector<Instance> instances_of(const std::vector<Instance>& all, ImageId image) {
  std::vector<Instance> out;
  for (const auto& inst : all) {
    if (inst.image_id == image) out.push_back(inst);
  }
  return out;
}

std::vector<std::vector<Instance>> group_by_image(const std::vector<ImageRecord>& images,
                                                  const std::vector<Instance>& all) {
  std::unordered_map<ImageId, std::size_t> slot;
  for (std::size_t i = 0; i < images.size(); ++i) slot.emplace(images[i].id, i);
  std::vector<std::vector<Instance>> out(images.size());
  for (const auto& inst : all) {
    if (auto it = slot.find(inst.image_id); it != slot.end()) out[it->second].push_back(inst);
  }
  return out;
}

}  // namespace cfu
