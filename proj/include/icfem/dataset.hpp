#pragma once

// Dataset CSV: header `id,obs_index,design_value,y`, one row per
// observation, obs_index 1-based. Every individual must carry the same
// number of observations with indices 1..n_obs.

#include <filesystem>
#include <iosfwd>

#include "icfem/model.hpp"

namespace icfem {

/// Throws Error{ParseError} with the offending 1-based line number.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::filesystem::path& path);

void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Throws Error{DimensionMismatch} unless every individual has `n_obs`
/// observations and design values.
void check_balanced(const Dataset& data, Index n_obs);

}  // namespace icfem
