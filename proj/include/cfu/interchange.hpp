#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cfu/core.hpp"

// JSON interchange documents; see docs/interchange.md for the schema.
namespace cfu::interchange {

using Json = nlohmann::ordered_json;

// Throws SchemaError carrying a JSON pointer to the offending field, also
// for documents that parse but break a dataset invariant.
Dataset parse_dataset(std::string_view text);
Dataset load_dataset(const std::filesystem::path& path);

// Canonical rendering: stable key order, ids in list order.
std::string dump_dataset(const Dataset& d);
void save_dataset(const Dataset& d, const std::filesystem::path& path);

Json to_json(const Dataset& d);
Dataset from_json(const nlohmann::json& doc);

Json ellipse_to_json(const EllipseModel& e);
EllipseModel ellipse_from_json(const nlohmann::json& j, const std::string& path);

Json instance_to_json(const Instance& inst, const ImageRecord& image);
// `image` supplies the raster size for polygon segmentations.
Instance instance_from_json(const nlohmann::json& j, const ImageRecord& image, const std::string& path);

Json experiment_to_json(const Experiment& e);
Experiment experiment_from_json(const nlohmann::json& j, const std::string& path);

// Adds the model/user annotations of `predictions` to `base`; images must
// already exist in `base`. Throws SchemaError on unknown images or ids
// already present.
void merge_predictions(Dataset& base, const Dataset& predictions);

}  // namespace cfu::interchange
