#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "groupmix/data.hpp"
#include "groupmix/trainers.hpp"

namespace groupmix {

enum class Generator { gaussian_toy, gaussian, spurious };

std::string_view to_string(Generator g);

struct DatasetConfig {
  Generator generator = Generator::gaussian_toy;
  std::size_t n_train = 2000;
  std::size_t n_val = 0;  // 0 means 10% of n_train
  std::size_t n_test = 2000;
  // gaussian_toy
  double sigma = 0.25;
  double minority_share = 0.05;
  // gaussian
  std::vector<GroupSpec> groups;
  // spurious
  std::size_t dim_core = 2;
  std::size_t dim_spurious = 2;
  double rho_train = 0.95;
  SpuriousOptions spurious;

  std::size_t validation_size() const { return n_val > 0 ? n_val : std::max<std::size_t>(1, n_train / 10); }
  bool operator==(const DatasetConfig&) const = default;
};

struct MethodBlock {
  std::string name;  // output directory label; defaults to the method name
  TrainConfig train;

  bool operator==(const MethodBlock&) const = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<MethodBlock> methods;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<std::string> defaults;  // one line per defaulted key
};

/// Parses a JSON experiment file. Unknown keys are rejected; parse errors
/// carry line:column, validation errors carry the key path.
LoadedConfig parse_config(const std::string& text);
LoadedConfig load_config(const std::filesystem::path& path);

/// Every field written explicitly; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// Serialises one method block (used for the per-run config echo).
std::string serialize_method(const MethodBlock& block);

struct DatasetBundle {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Train, validation and test splits from independent seed streams, all
/// annotated fine_grained; callers re-annotate per method.
DatasetBundle generate_datasets(const DatasetConfig& cfg, std::uint64_t seed);

/// The built-in toy comparison: 2D Gaussian groups, every method once.
ExperimentConfig toy_experiment();

}  // namespace groupmix
