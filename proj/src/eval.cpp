#include "groupmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "groupmix/error.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {

MetricsReport evaluate_predictions(std::span<const int> predictions, const Dataset& ds) {
  require(predictions.size() == ds.size(), ErrorKind::shape,
          "prediction count does not match dataset size");
  const GroupTruthView truth = ds.privileged();
  MetricsReport r;
  r.groups = truth.groups();
  std::vector<std::size_t> correct(r.groups.size(), 0);
  r.n_per_group.assign(r.groups.size(), 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto it = std::lower_bound(r.groups.begin(), r.groups.end(), truth.group(i));
    const auto g = static_cast<std::size_t>(it - r.groups.begin());
    ++r.n_per_group[g];
    if (predictions[i] == ds.label(i)) {
      ++correct[g];
      ++total_correct;
    }
  }
  r.per_group_accuracy.resize(r.groups.size());
  double sum = 0.0;
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    require(r.n_per_group[g] > 0, ErrorKind::data,
            "group " + to_string(r.groups[g]) + " has no samples in the evaluation split");
    r.per_group_accuracy[g] =
        static_cast<double>(correct[g]) / static_cast<double>(r.n_per_group[g]);
    sum += r.per_group_accuracy[g];
  }
  r.average_accuracy = static_cast<double>(total_correct) / static_cast<double>(ds.size());
  r.worst_group_accuracy =
      *std::min_element(r.per_group_accuracy.begin(), r.per_group_accuracy.end());
  r.group_average_accuracy = sum / static_cast<double>(r.groups.size());
  return r;
}

MetricsReport evaluate(const Mlp& model, const Dataset& ds) {
  const std::vector<int> preds = predict(model, ds.feature_matrix());
  return evaluate_predictions(preds, ds);
}

VisibleMetrics evaluate_visible(const Mlp& model, const Dataset& ds) {
  const std::vector<int> preds = predict(model, ds.feature_matrix());
  VisibleMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) correct += preds[i] == ds.label(i) ? 1 : 0;
  m.average_accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  if (!ds.exposes_groups()) return m;

  const std::vector<GroupId>& groups = ds.groups();
  std::vector<std::size_t> hit(groups.size(), 0), cnt(groups.size(), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto g = static_cast<std::size_t>(
        std::lower_bound(groups.begin(), groups.end(), ds.group(i)) - groups.begin());
    ++cnt[g];
    hit[g] += preds[i] == ds.label(i) ? 1 : 0;
  }
  double worst = 1.0;
  bool any = false;
  m.per_group_accuracy.assign(groups.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (cnt[g] == 0) continue;  // groups missing from a small validation split
    m.per_group_accuracy[g] = static_cast<double>(hit[g]) / static_cast<double>(cnt[g]);
    worst = any ? std::min(worst, m.per_group_accuracy[g]) : m.per_group_accuracy[g];
    any = true;
  }
  if (any) m.worst_group_accuracy = worst;
  return m;
}

double TheoremCheckResult::max_abs_z() const {
  double z = 0.0;
  for (double v : mean_z) z = std::max(z, std::abs(v));
  for (double v : var_z) z = std::max(z, std::abs(v));
  return z;
}

TheoremCheckResult theorem_check(std::span<const double> g_mean,
                                 std::span<const double> gbar_mean, double sigma, double alpha,
                                 std::size_t n, std::uint64_t seed) {
  require(n >= 10000, ErrorKind::precondition, "theorem check needs n >= 10^4");
  require(g_mean.size() == gbar_mean.size() && !g_mean.empty(), ErrorKind::shape,
          "group means differ in width");
  require(sigma > 0.0, ErrorKind::precondition, "sigma must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::precondition, "alpha must lie in [0, 1]");
  const std::size_t d = g_mean.size();
  TheoremCheckResult r;
  r.alpha = alpha;
  r.sigma = sigma;
  r.n = n;
  r.g_mean.assign(g_mean.begin(), g_mean.end());
  r.gbar_mean.assign(gbar_mean.begin(), gbar_mean.end());
  r.predicted_var = (alpha * alpha + (1 - alpha) * (1 - alpha)) * sigma * sigma;
  for (std::size_t j = 0; j < d; ++j)
    r.predicted_mean.push_back(alpha * g_mean[j] + (1 - alpha) * gbar_mean[j]);

  Rng rng = make_rng(seed, "theorem-check");
  std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = sample_normal(rng, g_mean[j], sigma);
      const double hbar = sample_normal(rng, gbar_mean[j], sigma);
      // Centre on the prediction so the variance accumulates without cancellation.
      const double dev = alpha * h + (1 - alpha) * hbar - r.predicted_mean[j];
      sum[j] += dev;
      sumsq[j] += dev * dev;
    }
  }
  const double nn = static_cast<double>(n);
  const double mean_se = std::sqrt(r.predicted_var / nn);
  const double var_se = r.predicted_var * std::sqrt(2.0 / (nn - 1));
  double pooled = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double m = sum[j] / nn;
    const double v = (sumsq[j] - nn * m * m) / (nn - 1);
    r.empirical_mean.push_back(r.predicted_mean[j] + m);
    r.empirical_var.push_back(v);
    r.mean_z.push_back(m / mean_se);
    r.var_z.push_back((v - r.predicted_var) / var_se);
    pooled += v;
  }
  r.empirical_var_pooled = pooled / static_cast<double>(d);
  r.pooled_var_z = (r.empirical_var_pooled - r.predicted_var) /
                   (r.predicted_var * std::sqrt(2.0 / (static_cast<double>(d) * (nn - 1))));
  return r;
}

BoundaryGrid export_boundary(const Mlp& model, const GridBounds& bounds, std::size_t nx,
                             std::size_t ny) {
  require(model.input_dim() == 2, ErrorKind::unsupported,
          "boundary export needs a 2D-input model, got input width " +
              std::to_string(model.input_dim()));
  require(nx >= 1 && ny >= 1, ErrorKind::precondition, "grid resolution must be >= 1");
  require(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min, ErrorKind::precondition,
          "grid bounds are empty");
  BoundaryGrid grid;
  grid.nx = nx;
  grid.ny = ny;
  const double dx = (bounds.x_max - bounds.x_min) / static_cast<double>(nx);
  const double dy = (bounds.y_max - bounds.y_min) / static_cast<double>(ny);
  for (std::size_t i = 0; i < nx; ++i) grid.xs.push_back(bounds.x_min + (i + 0.5) * dx);
  for (std::size_t j = 0; j < ny; ++j) grid.ys.push_back(bounds.y_min + (j + 0.5) * dy);
  Matrix pts(nx * ny, 2);
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      pts(j * nx + i, 0) = grid.xs[i];
      pts(j * nx + i, 1) = grid.ys[j];
    }
  grid.classes = predict(model, pts);
  return grid;
}

}  // namespace groupmix
