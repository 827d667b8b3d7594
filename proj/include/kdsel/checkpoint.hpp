// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "json.hpp"
#include "kdsel/mlp.hpp"

namespace kdsel {

struct Checkpoint {
  Mlp model;
  double margin{0.0};         // overconfidence wrapper, 0 for a plain model
  nlohmann::json lineage;     // free-form: seeds, recipe id, dataset id
};

/// u64 LE header length, JSON header, then the flat parameters as LE f64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kdsel
