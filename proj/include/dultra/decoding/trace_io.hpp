#pragma once

#include <filesystem>

#include "dultra/decoding/decode.hpp"
#include "json.hpp"

namespace dultra::decoding {

nlohmann::json trace_to_json(const RolloutTrace& trace);
/// Throws std::invalid_argument on missing or malformed fields.
RolloutTrace trace_from_json(const nlohmann::json& j);

void save_trace(const std::filesystem::path& path, const RolloutTrace& trace);
RolloutTrace load_trace(const std::filesystem::path& path);

}  // namespace dultra::decoding
