#pragma once

#include <filesystem>

#include <json.hpp>

#include "satdet/det/model.hpp"

namespace satdet::det {

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Throws DataError naming the missing or malformed key.
ModelConfig model_config_from_json(const nlohmann::json& j);

void write_sidecar(const std::filesystem::path& checkpoint, const nlohmann::json& j);
nlohmann::json read_sidecar(const std::filesystem::path& checkpoint);

} // namespace satdet::det
