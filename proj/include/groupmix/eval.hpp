#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "groupmix/data.hpp"
#include "groupmix/identify.hpp"
#include "groupmix/nn.hpp"

namespace groupmix {

struct MetricsReport {
  std::vector<GroupId> groups;
  std::vector<double> per_group_accuracy;
  std::vector<std::size_t> n_per_group;
  double average_accuracy = 0.0;        // correct / total
  double worst_group_accuracy = 0.0;    // min over groups
  double group_average_accuracy = 0.0;  // unweighted mean over groups
  std::optional<IdentificationQuality> identification_quality;
};

/// Per-group accuracy through the privileged view. Every declared group must
/// have at least one sample.
MetricsReport evaluate(const Mlp& model, const Dataset& ds);
MetricsReport evaluate_predictions(std::span<const int> predictions, const Dataset& ds);

/// Metrics a trainer may legitimately compute: average accuracy always,
/// worst-group accuracy only when the split exposes groups.
struct VisibleMetrics {
  double average_accuracy = 0.0;
  std::optional<double> worst_group_accuracy;
  std::vector<double> per_group_accuracy;  // empty when groups are withheld
};

VisibleMetrics evaluate_visible(const Mlp& model, const Dataset& ds);

struct TheoremCheckResult {
  double alpha = 0.0;
  double sigma = 0.0;
  std::size_t n = 0;
  std::vector<double> g_mean;
  std::vector<double> gbar_mean;
  std::vector<double> empirical_mean;
  std::vector<double> empirical_var;  // per coordinate
  double empirical_var_pooled = 0.0;
  std::vector<double> predicted_mean;  // alpha g + (1 - alpha) gbar
  double predicted_var = 0.0;          // (alpha^2 + (1 - alpha)^2) sigma^2
  std::vector<double> mean_z;          // per coordinate
  std::vector<double> var_z;           // per coordinate
  double pooled_var_z = 0.0;

  double max_abs_z() const;
};

/// Mixes n endpoint pairs h ~ N(g, sigma^2 I), hbar ~ N(gbar, sigma^2 I) at a
/// fixed rate alpha and compares the moments of alpha h + (1 - alpha) hbar
/// with the predicted Gaussian.
TheoremCheckResult theorem_check(std::span<const double> g_mean,
                                 std::span<const double> gbar_mean, double sigma, double alpha,
                                 std::size_t n, std::uint64_t seed);

struct GridBounds {
  double x_min = -1.0;
  double x_max = 1.0;
  double y_min = -1.0;
  double y_max = 1.0;
};

struct BoundaryGrid {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<double> xs;  // cell centres
  std::vector<double> ys;
  std::vector<int> classes;  // row-major over (y, x): classes[iy * nx + ix]

  int at(std::size_t ix, std::size_t iy) const { return classes.at(iy * nx + ix); }
};

/// Predicted class at the centre of every cell of an nx-by-ny grid.
BoundaryGrid export_boundary(const Mlp& model, const GridBounds& bounds, std::size_t nx,
                             std::size_t ny);

}  // namespace groupmix
