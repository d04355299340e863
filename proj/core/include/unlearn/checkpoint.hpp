#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "unlearn/model.hpp"

namespace unlearn {

inline constexpr int kCheckpointSchemaVersion = 1;

class FisherDiag;

// JSON envelope: {schema_version, kind, [source], arch:{V,d,C}, values:[...]}.
// Doubles are written in shortest round-trip form so reload is bit-exact.
nlohmann::json params_to_json(const ParamVector& theta);
ParamVector params_from_json(const nlohmann::json& doc);

nlohmann::json fisher_to_json(const FisherDiag& fisher);
FisherDiag fisher_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const ParamVector& theta);
ParamVector load_checkpoint(const std::filesystem::path& path);

void save_fisher(const std::filesystem::path& path, const FisherDiag& fisher);
FisherDiag load_fisher(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never see a torn file.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace unlearn
