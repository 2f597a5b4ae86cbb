#pragma once

#include <filesystem>

#include <json.hpp>

#include "hscal/model.hpp"

namespace hscal {

inline constexpr const char* kCheckpointFormat = "hscal-checkpoint/1";

nlohmann::json to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

// Whole-model document: featurizer, encoder weights, head (frame inline for
// the hyperspherical head) and the label vocabulary.
nlohmann::json model_to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);

void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace hscal
