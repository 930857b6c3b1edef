#pragma once

// Checkpoint directories: manifest.json (names, shapes, roles, byte offsets and
// run metadata) plus one little-endian float32 blob per role and module.

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "phenoswin/params.hpp"
#include "json.hpp"

namespace phenoswin {

using TensorMap = std::map<std::string, Tensor>;

struct CheckpointBundle {
    TensorMap student;
    std::optional<TensorMap> teacher;
    TensorMap buffers;
    nlohmann::json metadata = nlohmann::json::object();  // config_hash, iteration, seed, kind
};

TensorMap parameter_values(const ParamStore& store);

CheckpointBundle make_bundle(const ParamStore& student, const ParamStore* teacher, nlohmann::json metadata);

/// Writes into a temporary sibling directory and renames it into place.
void save_checkpoint(const std::filesystem::path& dir, const CheckpointBundle& bundle);
CheckpointBundle load_checkpoint(const std::filesystem::path& dir);

/// Copies values into existing parameters of matching name and shape. Throws
/// listing every missing or mismatched key unless `allow_missing`.
void assign_parameters(ParamStore& store, const TensorMap& values, bool allow_missing = false);

}  // namespace phenoswin
