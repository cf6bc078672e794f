#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "groupmix/data.hpp"

namespace groupmix {

enum class BufferSource { identified, oracle };

/// Train indices believed to be minority: the phase-I misclassification set
/// at epoch T, or the oracle minority mask.
struct ErrorBuffer {
  std::vector<std::size_t> indices;  // sorted, unique
  std::size_t epoch_T = 0;           // 0 for oracle buffers
  BufferSource source = BufferSource::identified;

  std::vector<bool> mask(std::size_t n) const;
  bool operator==(const ErrorBuffer&) const = default;
};

struct IdentificationQuality {
  std::size_t S = 0;   // buffer members that are true minority
  std::size_t NS = 0;  // buffer members that are not
  std::size_t minority_total = 0;
  double precision = 0.0;
  double recall = 0.0;
};

enum class TSelection { fixed, phase1_val, exhaustive };

struct IdentificationConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double weight_decay = 1e-3;
  std::vector<std::size_t> hidden = {32, 32};
  std::uint64_t seed = 0;
  TSelection selection = TSelection::exhaustive;
  std::size_t fixed_epoch = 0;  // 0 means unset
  std::vector<std::size_t> grid = {1, 2, 5, 10, 20};

  bool operator==(const IdentificationConfig&) const = default;
};

struct IdentificationEpoch {
  std::size_t epoch = 0;
  std::size_t train_error_count = 0;
  std::optional<double> val_worst_group_acc;
  std::optional<double> criterion;  // selection score when the epoch was a candidate
};

struct IdentificationResult {
  ErrorBuffer buffer;
  std::vector<IdentificationEpoch> history;
};

/// Scores a candidate buffer by running phase II on it (higher is better).
using Phase2Probe = std::function<double(const ErrorBuffer&)>;

/// Phase I: fresh ERM fit, misclassified train indices recorded after every
/// epoch, T chosen per cfg.selection (ties to the smallest T).
IdentificationResult run_identification(const Dataset& train, const Dataset* val,
                                        const IdentificationConfig& cfg,
                                        const Phase2Probe& probe = {});

ErrorBuffer buffer_from_oracle(const std::vector<bool>& mask);

IdentificationQuality identification_quality(const ErrorBuffer& buffer,
                                              const std::vector<bool>& oracle_mask);

std::string_view to_string(BufferSource s);
std::string_view to_string(TSelection s);
TSelection parse_selection(std::string_view s);

/// Header lines "# epoch_T=<T>" and "# source=<source>", then one index per line.
void write_buffer(const ErrorBuffer& buffer, const std::filesystem::path& path);
ErrorBuffer read_buffer(const std::filesystem::path& path);

/// CSV: epoch,train_error_count,val_worst_group_acc
void write_identification_history(const std::vector<IdentificationEpoch>& history,
                                  const std::filesystem::path& path);

}  // namespace groupmix
