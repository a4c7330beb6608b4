#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dultra/autodiff/optimizer.hpp"
#include "dultra/autodiff/parameters.hpp"

namespace dultra::ad {

// A checkpoint is a pair of files sharing a stem: `<stem>.bin` holds every
// tensor as consecutive little-endian float64 values, `<stem>.json` maps each
// name to its shape and byte offset, plus free-form metadata under "meta".

struct NamedTensor {
  std::string name;
  Tensor value;
};

void save_tensors(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& meta = nlohmann::json::object());

/// Reads every tensor listed in the manifest. Throws std::runtime_error on a
/// missing or inconsistent file.
std::vector<NamedTensor> load_tensors(const std::filesystem::path& stem,
                                      nlohmann::json* meta = nullptr);

void save_parameters(const std::filesystem::path& stem, const ParameterSet& params,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Overwrites the values of `params` from a checkpoint. Every parameter must be
/// present with a matching shape.
void load_parameters(const std::filesystem::path& stem, ParameterSet& params,
                     nlohmann::json* meta = nullptr);

void save_optimizer(const std::filesystem::path& stem, const ParameterSet& params,
                    const OptimizerState& state);
void load_optimizer(const std::filesystem::path& stem, const ParameterSet& params,
                    OptimizerState& state);

/// FNV-1a digest of all parameter bytes, used to assert bitwise equality.
std::string parameter_digest(const ParameterSet& params);

}  // namespace dultra::ad
