#pragma once

// Run configuration: INI-style text with sections [model], [pattern],
// [init], [mcem] and [study]. Vectors are whitespace separated; a
// covariance is given either as its full row-major q*q entries or as the
// q(q+1)/2 lower-triangle entries row by row; pattern pairs are one-based,
// e.g. `pairs = (1,4) (3,4)`.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "icfem/inference.hpp"
#include "icfem/mcem.hpp"

namespace icfem {

struct ModelSpec {
  std::string name = "cortisol";
  Index q = 4;
  Index replicates = 1;
  std::vector<double> doses;
};

enum class Estimator { Em, EmIcf, ZeroForced };

std::string_view to_string(Estimator e);

struct StudySettings {
  int replicates = 20;
  int individuals = 30;
  std::uint64_t seed = 2008;
  FitParams truth;
  std::vector<Estimator> estimators{Estimator::Em, Estimator::EmIcf, Estimator::ZeroForced};
  int lr_samples = 1000;
  int threads = 1;
};

struct RunConfig {
  ModelSpec model;
  ZeroPattern pattern;
  FitParams init;
  FitConfig mcem;
  int loglik_samples = 10000;
  int se_samples = 2000;
  bool compute_se = true;
  StudySettings study;
  bool has_study = false;
};

/// Throws Error{ParseError} on malformed input.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);

/// One-based pairs from text such as "(1,4) (3,4)" or "1-4, 3-4".
std::vector<std::pair<int, int>> parse_pairs(const std::string& text);

/// Covariance from full (q*q) or lower-triangle (q(q+1)/2) entries.
MatrixXd parse_covariance(const std::vector<double>& values, Index q);

/// The cortisol analysis configuration: m0 = (50, 70, 1, 0.1),
/// Sigma0 = diag(0.01 m0^2), sigma0^2 = 0.2^2, zeros at (1,4) and (3,4),
/// L = 500, at most 400 iterations, gamma_k = 1/k^0.8 after warm-up, and
/// the simulation-study truth in [study].
std::string cortisol_config_text();

std::unique_ptr<NlmeModel> make_model(const ModelSpec& spec);

}  // namespace icfem
