#pragma once

#include <filesystem>
#include <string>

#include "elsig/model.hpp"
#include "elsig/types.hpp"

namespace elsig {

/// Binary matrix container: 8-byte magic "ELSIGMAT", little-endian u32 rows
/// and cols, then row-major little-endian IEEE-754 doubles.
void write_matrix(const std::filesystem::path& path, const MatrixRef& m);
Matrix read_matrix(const std::filesystem::path& path);

/// Model file: JSON {v, d, norm, eps, seed, gamma, beta, W} where W names
/// the sidecar matrix container (relative to the JSON file).
void save_model(const std::filesystem::path& json_path,
                const FinalLayerParams& params);
FinalLayerParams load_model(const std::filesystem::path& json_path);

/// Logprob file: JSON {v, n, token_ids, data} plus the matrix sidecar.
void save_logprobs(const std::filesystem::path& json_path,
                   const LogprobMatrix& m);
LogprobMatrix load_logprobs(const std::filesystem::path& json_path);

}  // namespace elsig
