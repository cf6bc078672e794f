#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "groupmix/eval.hpp"
#include "groupmix/trainers.hpp"

namespace groupmix {

struct ReportRow {
  std::string method;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct ReportHistory {
  std::string method;
  std::uint64_t seed = 0;
  RunHistory history;
};

/// Writes into `dir`:
///   metrics.csv  method,seed,avg_acc,worst_acc,acc_g_<c>_<y>...,group_avg_acc
///   summary.svg  per-method mean average and worst-group accuracy bars
///   curves.svg   validation criterion per epoch, one line per run
/// Output bytes depend only on the inputs.
void emit_report(std::span<const ReportRow> rows, std::span<const ReportHistory> histories,
                 const std::filesystem::path& dir);

std::string metrics_csv(std::span<const ReportRow> rows);

/// CSV x1,x2,class over the grid cells.
void write_boundary(const BoundaryGrid& grid, const std::filesystem::path& path);

}  // namespace groupmix
