#include "cfu/interchange.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "cfu/error.hpp"

namespace cfu::interchange {

namespace {

using nlohmann::json;

constexpr std::string_view kFormat = "cfu-interchange";
constexpr int kVersion = 1;

const json& member(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path + "/" + key, "missing required field");
  return *it;
}

const json* optional_member(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError(path, "expected a number");
  return j.get<double>();
}

std::int64_t integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::string text(const json& j, const std::string& path) {
  if (!j.is_string()) throw SchemaError(path, "expected a string");
  return j.get<std::string>();
}

bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw SchemaError(path, "expected a boolean");
  return j.get<bool>();
}

const json& array(const json& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path, "expected an array");
  return j;
}

template <typename T>
T parsed(std::optional<T> v, const std::string& path, std::string_view what) {
  if (!v) throw SchemaError(path, fmt::format("unknown {}", what));
  return *v;
}

ClassLabel category(const json& j, const std::string& path) {
  return parsed(label_from_category(static_cast<int>(integer(j, path))), path, "category id");
}

ImageRecord image_from_json(const json& j, const std::string& path) {
  ImageRecord r;
  r.id = ImageId{integer(member(j, "id", path), path + "/id")};
  const auto w = integer(member(j, "width", path), path + "/width");
  const auto h = integer(member(j, "height", path), path + "/height");
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) throw SchemaError(path, "width and height must be in [1, 65536]");
  r.width = static_cast<std::uint32_t>(w);
  r.height = static_cast<std::uint32_t>(h);
  if (const json* f = optional_member(j, "file_name")) r.pixel_data_ref = text(*f, path + "/file_name");
  if (const json* s = optional_member(j, "split")) {
    r.split = parsed(parse_split(text(*s, path + "/split")), path + "/split", "split");
  }
  if (const json* e = optional_member(j, "dish_ellipse")) {
    r.dish_ellipse = ellipse_from_json(*e, path + "/dish_ellipse");
    r.ellipse_source = EllipseSource::Fitted;
  }
  if (const json* s = optional_member(j, "ellipse_source")) {
    r.ellipse_source = parsed(parse_ellipse_source(text(*s, path + "/ellipse_source")), path + "/ellipse_source",
                              "ellipse source");
  }
  return r;
}

Json image_to_json(const ImageRecord& r) {
  Json j;
  j["id"] = raw(r.id);
  j["width"] = r.width;
  j["height"] = r.height;
  if (r.pixel_data_ref) j["file_name"] = *r.pixel_data_ref;
  j["split"] = to_string(r.split);
  if (r.dish_ellipse) j["dish_ellipse"] = ellipse_to_json(*r.dish_ellipse);
  j["ellipse_source"] = to_string(r.ellipse_source);
  return j;
}

RleMask rle_from_json(const json& seg, const ImageRecord& image, const std::string& path) {
  const json& size = array(member(seg, "size", path), path + "/size");
  if (size.size() != 2) throw SchemaError(path + "/size", "expected [height, width]");
  const auto h = integer(size[0], path + "/size/0");
  const auto w = integer(size[1], path + "/size/1");
  if (h != image.height || w != image.width) throw SchemaError(path + "/size", "mask size differs from the image");
  RleMask m{image.width, image.height, {}};
  const json& counts = array(member(seg, "counts", path), path + "/counts");
  m.counts.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto c = integer(counts[i], fmt::format("{}/counts/{}", path, i));
    if (c < 0 || c > UINT32_MAX) throw SchemaError(fmt::format("{}/counts/{}", path, i), "run length out of range");
    m.counts.push_back(static_cast<std::uint32_t>(c));
  }
  if (!well_formed(m)) {
    throw SchemaError(path + "/counts", "runs after the first must be positive and sum to width * height");
  }
  return m;
}

}  // namespace

Json ellipse_to_json(const EllipseModel& e) {
  return Json{{"cx", e.cx}, {"cy", e.cy}, {"a", e.a}, {"b", e.b}, {"theta", e.theta}};
}

EllipseModel ellipse_from_json(const json& j, const std::string& path) {
  EllipseModel e;
  e.cx = number(member(j, "cx", path), path + "/cx");
  e.cy = number(member(j, "cy", path), path + "/cy");
  e.a = number(member(j, "a", path), path + "/a");
  e.b = number(member(j, "b", path), path + "/b");
  e.theta = number(member(j, "theta", path), path + "/theta");
  if (!e.valid()) throw SchemaError(path, "ellipse must satisfy a >= b > 0 and theta in [0, pi)");
  return e;
}

Json instance_to_json(const Instance& inst, const ImageRecord& image) {
  Json j;
  j["id"] = raw(inst.id);
  j["image_id"] = raw(inst.image_id);
  j["category_id"] = category_id(inst.label);
  j["bbox"] = {inst.bbox.x_min, inst.bbox.y_min, inst.bbox.x_max - inst.bbox.x_min, inst.bbox.y_max - inst.bbox.y_min};
  if (inst.mask) {
    j["segmentation"] = {{"size", {image.height, image.width}}, {"counts", inst.mask->counts}};
  }
  j["score"] = inst.score;
  j["origin"] = to_string(inst.origin);
  j["unsure"] = inst.unsure;
  if (inst.alt_label) j["alt_category_id"] = category_id(*inst.alt_label);
  j["validated"] = inst.validated;
  if (inst.excluded) j["excluded"] = to_string(*inst.excluded);
  return j;
}

Instance instance_from_json(const json& j, const ImageRecord& image, const std::string& path) {
  Instance inst;
  inst.id = InstanceId{integer(member(j, "id", path), path + "/id")};
  inst.image_id = ImageId{integer(member(j, "image_id", path), path + "/image_id")};
  inst.label = category(member(j, "category_id", path), path + "/category_id");
  const json& bbox = array(member(j, "bbox", path), path + "/bbox");
  if (bbox.size() != 4) throw SchemaError(path + "/bbox", "expected [x, y, w, h]");
  double v[4];
  for (std::size_t k = 0; k < 4; ++k) v[k] = number(bbox[k], fmt::format("{}/bbox/{}", path, k));
  inst.bbox = BBox::from_xywh(v[0], v[1], v[2], v[3]);
  const json* score = optional_member(j, "score");
  if (score) inst.score = number(*score, path + "/score");
  if (const json* o = optional_member(j, "origin")) {
    inst.origin = parsed(parse_origin(text(*o, path + "/origin")), path + "/origin", "origin");
  } else {
    inst.origin = score ? Origin::Model : Origin::GroundTruth;
  }
  if (const json* seg = optional_member(j, "segmentation")) {
    const std::string sp = path + "/segmentation";
    if (seg->is_object()) {
      inst.mask = rle_from_json(*seg, image, sp);
    } else if (seg->is_array()) {
      std::vector<std::vector<double>> polys;
      for (std::size_t p = 0; p < seg->size(); ++p) {
        const json& poly = array((*seg)[p], fmt::format("{}/{}", sp, p));
        std::vector<double> coords;
        for (std::size_t k = 0; k < poly.size(); ++k) coords.push_back(number(poly[k], fmt::format("{}/{}/{}", sp, p, k)));
        if (coords.size() < 6 || coords.size() % 2) throw SchemaError(fmt::format("{}/{}", sp, p), "polygon needs >= 3 (x, y) pairs");
        polys.push_back(std::move(coords));
      }
      inst.mask = rasterize_polygons(polys, image.width, image.height);
      // The tight box of the rasterized mask replaces the declared one.
      if (auto tight = tight_bbox(*inst.mask)) inst.bbox = *tight;
    } else {
      throw SchemaError(sp, "expected an RLE object or a polygon list");
    }
  }
  if (const json* u = optional_member(j, "unsure")) inst.unsure = boolean(*u, path + "/unsure");
  if (const json* a = optional_member(j, "alt_category_id")) inst.alt_label = category(*a, path + "/alt_category_id");
  if (const json* v2 = optional_member(j, "validated")) inst.validated = boolean(*v2, path + "/validated");
  if (const json* e = optional_member(j, "excluded")) {
    inst.excluded = parsed(parse_exclusion_reason(text(*e, path + "/excluded")), path + "/excluded", "exclusion reason");
  }
  return inst;
}

Json experiment_to_json(const Experiment& e) {
  Json tri = Json::array();
  for (const auto& t : e.triplicates) {
    Json ids = Json::array();
    for (auto id : t.image_ids) ids.push_back(raw(id));
    tri.push_back({{"image_ids", ids}, {"dilution", t.dilution.value}});
  }
  return Json{{"id", e.id}, {"created_at", e.created_at}, {"triplicates", tri}};
}

Experiment experiment_from_json(const json& j, const std::string& path) {
  Experiment e;
  e.id = text(member(j, "id", path), path + "/id");
  if (e.id.empty()) throw SchemaError(path + "/id", "must not be empty");
  if (const json* c = optional_member(j, "created_at")) e.created_at = integer(*c, path + "/created_at");
  const json& tri = array(member(j, "triplicates", path), path + "/triplicates");
  for (std::size_t i = 0; i < tri.size(); ++i) {
    const std::string tp = fmt::format("{}/triplicates/{}", path, i);
    TriplicateGroup g;
    const json& ids = array(member(tri[i], "image_ids", tp), tp + "/image_ids");
    for (std::size_t k = 0; k < ids.size(); ++k) g.image_ids.push_back(ImageId{integer(ids[k], fmt::format("{}/image_ids/{}", tp, k))});
    g.dilution.value = number(member(tri[i], "dilution", tp), tp + "/dilution");
    e.triplicates.push_back(std::move(g));
  }
  return e;
}

Json to_json(const Dataset& d) {
  Json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["dataset"] = {{"id", d.id}, {"name", d.name}};
  doc["categories"] = Json::array({Json{{"id", category_id(ClassLabel::BVGMinus)}, {"name", "BVG-"}},
                                   Json{{"id", category_id(ClassLabel::BVGPlus)}, {"name", "BVG+"}}});
  std::unordered_map<ImageId, const ImageRecord*> by_id;
  Json images = Json::array();
  for (const auto& img : d.images) {
    images.push_back(image_to_json(img));
    by_id.emplace(img.id, &img);
  }
  doc["images"] = std::move(images);
  Json anns = Json::array();
  for (const auto* list : {&d.ground_truth, &d.predictions}) {
    for (const auto& inst : *list) {
      auto it = by_id.find(inst.image_id);
      if (it == by_id.end()) throw InvalidArgument(fmt::format("instance {} references unknown image", raw(inst.id)));
      anns.push_back(instance_to_json(inst, *it->second));
    }
  }
  doc["annotations"] = std::move(anns);
  Json exps = Json::array();
  for (const auto& e : d.experiments) exps.push_back(experiment_to_json(e));
  doc["experiments"] = std::move(exps);
  return doc;
}

Dataset from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError("", "document must be an object");
  if (const json* f = optional_member(doc, "format"); f && text(*f, "/format") != kFormat) {
    throw SchemaError("/format", fmt::format("expected \"{}\"", kFormat));
  }
  if (const json* v = optional_member(doc, "version"); v && integer(*v, "/version") != kVersion) {
    throw SchemaError("/version", fmt::format("unsupported version (expected {})", kVersion));
  }
  Dataset d;
  if (const json* ds = optional_member(doc, "dataset")) {
    if (const json* id = optional_member(*ds, "id")) d.id = text(*id, "/dataset/id");
    if (const json* name = optional_member(*ds, "name")) d.name = text(*name, "/dataset/name");
  }
  if (const json* cats = optional_member(doc, "categories")) {
    array(*cats, "/categories");
    for (std::size_t i = 0; i < cats->size(); ++i) {
      const std::string p = fmt::format("/categories/{}", i);
      const ClassLabel c = category(member((*cats)[i], "id", p), p + "/id");
      if (const json* name = optional_member((*cats)[i], "name"); name && text(*name, p + "/name") != to_string(c)) {
        throw SchemaError(p + "/name", fmt::format("category {} must be named {}", category_id(c), to_string(c)));
      }
    }
  }
  const json& images = array(member(doc, "images", ""), "/images");
  std::unordered_map<ImageId, std::size_t> image_index;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string p = fmt::format("/images/{}", i);
    d.images.push_back(image_from_json(images[i], p));
    if (!image_index.emplace(d.images.back().id, i).second) throw SchemaError(p + "/id", "duplicate image id");
  }
  std::unordered_set<InstanceId> seen;
  std::unordered_map<InstanceId, std::string> paths;
  if (const json* anns = optional_member(doc, "annotations")) {
    array(*anns, "/annotations");
    for (std::size_t i = 0; i < anns->size(); ++i) {
      const std::string p = fmt::format("/annotations/{}", i);
      const json& a = (*anns)[i];
      const ImageId img{integer(member(a, "image_id", p), p + "/image_id")};
      auto it = image_index.find(img);
      if (it == image_index.end()) throw SchemaError(p + "/image_id", "unknown image");
      Instance inst = instance_from_json(a, d.images[it->second], p);
      if (!seen.insert(inst.id).second) throw SchemaError(p + "/id", "duplicate annotation id");
      paths.emplace(inst.id, p);
      (inst.origin == Origin::GroundTruth ? d.ground_truth : d.predictions).push_back(std::move(inst));
    }
  }
  if (const json* exps = optional_member(doc, "experiments")) {
    array(*exps, "/experiments");
    for (std::size_t i = 0; i < exps->size(); ++i) {
      d.experiments.push_back(experiment_from_json((*exps)[i], fmt::format("/experiments/{}", i)));
    }
  }

  const auto violations = validate_dataset(d);
  if (!violations.empty()) {
    const auto& v = violations.front();
    std::string path = "/";
    long long id = 0;
    if (std::sscanf(v.entity.c_str(), "instance %lld", &id) == 1) {
      if (auto it = paths.find(InstanceId{id}); it != paths.end()) path = it->second;
    } else if (std::sscanf(v.entity.c_str(), "image %lld", &id) == 1) {
      if (auto it = image_index.find(ImageId{id}); it != image_index.end()) path = fmt::format("/images/{}", it->second);
    } else if (v.entity.starts_with("experiment")) {
      path = "/experiments";
    }
    throw SchemaError(path, v.message);
  }
  return d;
}

Dataset parse_dataset(std::string_view text_doc) {
  json doc;
  try {
    doc = json::parse(text_doc.begin(), text_doc.end());
  } catch (const json::parse_error& e) {
    throw SchemaError("", fmt::format("malformed document at byte {}", e.byte));
  }
  return from_json(doc);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str());
}

std::string dump_dataset(const Dataset& d) { return to_json(d).dump(1) + "\n"; }

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << dump_dataset(d);
}

void merge_predictions(Dataset& base, const Dataset& predictions) {
  std::unordered_set<InstanceId> ids;
  for (const auto& i : base.ground_truth) ids.insert(i.id);
  for (const auto& i : base.predictions) ids.insert(i.id);
  for (std::size_t k = 0; k < predictions.predictions.size(); ++k) {
    const Instance& inst = predictions.predictions[k];
    const std::string p = fmt::format("/annotations/{}", k);
    const ImageRecord* img = base.find_image(inst.image_id);
    if (!img) throw SchemaError(p + "/image_id", "unknown image");
    if (inst.mask && (inst.mask->width != img->width || inst.mask->height != img->height)) {
      throw SchemaError(p + "/segmentation", "mask size differs from the image");
    }
    if (!ids.insert(inst.id).second) throw SchemaError(p + "/id", "id already present in the base dataset");
    base.predictions.push_back(inst);
  }
}

}  // namespace cfu::interchange
