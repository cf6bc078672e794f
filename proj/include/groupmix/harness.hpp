#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "groupmix/config.hpp"
#include "groupmix/report.hpp"

namespace groupmix {

/// One (method, seed) cell of an experiment.
struct CellResult {
  std::string name;
  std::uint64_t seed = 0;
  std::optional<std::string> error;  // "<category>: <message>" when the cell failed
  ReportRow row;
  ReportHistory history;
};

/// Trains one method block on the datasets for `seed` and writes
/// dir/{name}/{seed}/{history.csv, metrics.csv, model.ckpt, config.json, run.log},
/// plus boundary.csv for 2D inputs and buffer.txt for two-phase methods.
/// Errors propagate.
CellResult run_cell(const ExperimentConfig& cfg, const MethodBlock& block, std::uint64_t seed,
                    const DatasetBundle& data, const std::filesystem::path& dir,
                    const std::vector<std::string>& defaults = {});

/// Every method x seed cell, in parallel. A failing cell records its error and
/// leaves the others untouched. Results come back in config order (method
/// major, seed minor), independent of scheduling. Writes dir/metrics.csv,
/// dir/summary.svg, dir/curves.svg over the successful cells and
/// dir/errors.csv listing failures.
std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                  const std::vector<std::string>& defaults = {},
                                  unsigned max_threads = 0);

/// Grid bounds covering the training inputs with a 10% margin.
GridBounds boundary_bounds(const Dataset& ds);

int cli_main(int argc, char** argv);

}  // namespace groupmix
