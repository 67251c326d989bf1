#include <doctest.h>

#include <nlohmann/json.hpp>

#include "cfu/error.hpp"
#include "cfu/interchange.hpp"
#include "cfu/synthbench.hpp"
#include "oracles.hpp"

using namespace cfu;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "format": "cfu-interchange", "version": 1,
    "images": [{"id": 1, "width": 3, "height": 2, "split": "train"}],
    "annotations": [
      {"id": 10, "image_id": 1, "category_id": 2, "bbox": [0, 0, 3, 2],
       "segmentation": {"size": [2, 3], "counts": [0, 1, 2, 2, 1]}},
      {"id": 11, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.75}
    ]
  })");
}

std::string error_path(const json& doc) {
  try {
    interchange::from_json(doc);
  } catch (const SchemaError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("minimal document and origin inference") {
  const Dataset d = interchange::from_json(minimal());
  REQUIRE(d.images.size() == 1);
  CHECK(d.images[0].split == Split::Train);
  CHECK(d.images[0].ellipse_source == EllipseSource::None);
  REQUIRE(d.ground_truth.size() == 1);
  REQUIRE(d.predictions.size() == 1);
  CHECK(d.ground_truth[0].origin == Origin::GroundTruth);
  CHECK(d.ground_truth[0].label == ClassLabel::BVGPlus);
  CHECK(mask_area(*d.ground_truth[0].mask) == 3);
  CHECK(d.predictions[0].origin == Origin::Model);
  CHECK(d.predictions[0].label == ClassLabel::BVGMinus);
  CHECK(d.predictions[0].score == 0.75);
}

TEST_CASE("synthetic datasets round trip and dump canonically") {
  synth::SynthConfig cfg;
  cfg.seed = 5;
  cfg.n_colonies = 25;
  cfg.perturbation = synth::planted_perturbation();
  const auto s = synth::generate_dataset(cfg, 3);
  const std::string text = interchange::dump_dataset(s.dataset);
  const Dataset back = interchange::parse_dataset(text);
  CHECK(back == s.dataset);
  CHECK(interchange::dump_dataset(back) == text);
}

TEST_CASE("schema errors carry a pointer to the field") {
  json doc = minimal();
  doc["annotations"][1].erase("bbox");
  CHECK(error_path(doc) == "/annotations/1/bbox");

  doc = minimal();
  doc["annotations"][0]["category_id"] = 7;
  CHECK(error_path(doc) == "/annotations/0/category_id");

  doc = minimal();
  doc["annotations"][0]["segmentation"]["size"] = {3, 3};
  CHECK(error_path(doc) == "/annotations/0/segmentation/size");

  doc = minimal();
  doc["annotations"][0]["segmentation"]["counts"] = {0, 2, 0, 4};
  CHECK(error_path(doc) == "/annotations/0/segmentation/counts");

  doc = minimal();
  doc["annotations"][0]["segmentation"]["counts"] = {0, 1, 2, 2, 2};
  CHECK(error_path(doc) == "/annotations/0/segmentation/counts");

  doc = minimal();
  doc["annotations"][1]["image_id"] = 9;
  CHECK(error_path(doc) == "/annotations/1/image_id");

  doc = minimal();
  doc["annotations"][1]["id"] = 10;
  CHECK(error_path(doc) == "/annotations/1/id");

  doc = minimal();
  doc["images"][0]["width"] = 0;
  CHECK(error_path(doc) == "/images/0");

  doc = minimal();
  doc["images"][0]["split"] = "holdout";
  CHECK(error_path(doc) == "/images/0/split");

  doc = minimal();
  doc["images"][0]["dish_ellipse"] = {{"cx", 1}, {"cy", 1}, {"a", 1}, {"b", 2}, {"theta", 0}};
  CHECK(error_path(doc) == "/images/0/dish_ellipse");

  doc = minimal();
  doc["annotations"][1]["score"] = "high";
  CHECK(error_path(doc) == "/annotations/1/score");

  doc = minimal();
  doc["version"] = 2;
  CHECK(error_path(doc) == "/version");

  doc = minimal();
  doc["experiments"] = json::array({{{"id", ""}, {"triplicates", json::array()}}});
  CHECK(error_path(doc) == "/experiments/0/id");

  CHECK_THROWS_AS(interchange::parse_dataset("{\"images\": ["), SchemaError);
}

TEST_CASE("polygon segmentations are rasterized with a tight box") {
  json doc = minimal();
  doc["images"][0]["width"] = 20;
  doc["images"][0]["height"] = 20;
  doc["annotations"].erase(0);
  doc["annotations"][0]["bbox"] = {0, 0, 20, 20};
  doc["annotations"][0]["segmentation"] = json::array({{2.0, 3.0, 12.0, 3.0, 12.0, 9.0, 2.0, 9.0}});
  const Dataset d = interchange::from_json(doc);
  const Instance& p = d.predictions.at(0);
  REQUIRE(p.mask);
  const auto dense = oracle::dense_polygon_fill({{2, 3, 12, 3, 12, 9, 2, 9}}, 20, 20);
  CHECK(decode(*p.mask) == dense);
  CHECK(p.bbox == *tight_bbox(*p.mask));

  doc["annotations"][0]["segmentation"] = json::array({{1.0, 2.0, 3.0, 4.0}});
  CHECK(error_path(doc) == "/annotations/0/segmentation/0");
}

TEST_CASE("dish ellipse sets the source unless one is given") {
  json doc = minimal();
  doc["images"][0]["dish_ellipse"] = {{"cx", 1.5}, {"cy", 1}, {"a", 2}, {"b", 1}, {"theta", 0.5}};
  Dataset d = interchange::from_json(doc);
  CHECK(d.images[0].ellipse_source == EllipseSource::Fitted);
  CHECK(d.images[0].dish_ellipse->theta == 0.5);
  doc["images"][0]["ellipse_source"] = "user_override";
  d = interchange::from_json(doc);
  CHECK(d.images[0].ellipse_source == EllipseSource::UserOverride);
}

TEST_CASE("merging predictions") {
  Dataset base = interchange::from_json(minimal());
  base.predictions.clear();
  Dataset preds = interchange::from_json(minimal());
  interchange::merge_predictions(base, preds);
  CHECK(base.predictions.size() == 1);
  CHECK_THROWS_AS(interchange::merge_predictions(base, preds), SchemaError);

  Dataset other = preds;
  other.predictions[0].id = InstanceId{99};
  other.predictions[0].image_id = ImageId{5};
  CHECK_THROWS_AS(interchange::merge_predictions(base, other), SchemaError);
}
