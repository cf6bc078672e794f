#include "groupmix/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "groupmix/error.hpp"

namespace groupmix {

GroupWeights GroupWeights::uniform(std::size_t m) {
  require(m > 0, ErrorKind::weight, "no groups");
  return {std::vector<double>(m, 1.0 / static_cast<double>(m))};
}

void GroupWeights::validate() const {
  require(!q.empty(), ErrorKind::weight, "empty group weights");
  double s = 0.0;
  for (double v : q) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::weight, "group weights must be >= 0");
    s += v;
  }
  require(std::abs(s - 1.0) <= 1e-9, ErrorKind::weight,
          "group weights sum to " + std::to_string(s) + ", expected 1");
}

std::size_t BatchGroupStats::index_of(GroupId g) const {
  auto it = std::lower_bound(groups.begin(), groups.end(), g);
  require(it != groups.end() && *it == g, ErrorKind::index, "unknown group " + to_string(g));
  return static_cast<std::size_t>(it - groups.begin());
}

BatchGroupStats per_group_losses(std::span<const double> sample_losses,
                                 std::span<const GroupId> group_ids,
                                 std::span<const GroupId> group_set) {
  require(!sample_losses.empty(), ErrorKind::empty_batch, "empty batch");
  require(sample_losses.size() == group_ids.size(), ErrorKind::shape,
          "loss and group-id lengths differ");
  BatchGroupStats st;
  st.groups.assign(group_set.begin(), group_set.end());
  std::sort(st.groups.begin(), st.groups.end());
  st.groups.erase(std::unique(st.groups.begin(), st.groups.end()), st.groups.end());
  st.per_group_loss.assign(st.groups.size(), 0.0);
  st.per_group_count.assign(st.groups.size(), 0);
  for (std::size_t i = 0; i < sample_losses.size(); ++i) {
    const std::size_t g = st.index_of(group_ids[i]);
    st.per_group_loss[g] += sample_losses[i];
    ++st.per_group_count[g];
  }
  bool found = false;
  for (std::size_t g = 0; g < st.groups.size(); ++g) {
    if (st.per_group_count[g] == 0) continue;
    st.per_group_loss[g] /= static_cast<double>(st.per_group_count[g]);
    if (!found || st.per_group_loss[g] > st.per_group_loss[st.worst]) {
      st.worst = g;
      found = true;
    }
  }
  return st;
}

BatchGroupStats per_group_losses(std::span<const double> sample_losses,
                                 std::span<const GroupId> group_ids) {
  return per_group_losses(sample_losses, group_ids, group_ids);
}

double group_average_loss(const BatchGroupStats& stats, const GroupWeights& p) {
  require(p.q.size() == stats.groups.size(), ErrorKind::weight,
          "group weight length does not match group set");
  p.validate();
  double total = 0.0;
  for (std::size_t g = 0; g < stats.groups.size(); ++g) {
    if (stats.per_group_count[g] == 0) {
      require(p.q[g] == 0.0, ErrorKind::weight,
              "weight on group " + to_string(stats.groups[g]) + " which is absent from the batch");
      continue;
    }
    total += p.q[g] * stats.per_group_loss[g];
  }
  return total;
}

double dro_loss(const BatchGroupStats& stats) {
  require(!stats.groups.empty() && stats.per_group_count.at(stats.worst) > 0,
          ErrorKind::empty_batch, "no non-empty group");
  return stats.per_group_loss[stats.worst];
}

GroupWeights groupdro_update(const GroupWeights& q, const BatchGroupStats& stats, double eta_q) {
  require(q.q.size() == stats.groups.size(), ErrorKind::weight,
          "group weight length does not match group set");
  require(eta_q >= 0.0 && std::isfinite(eta_q), ErrorKind::config, "eta_q must be >= 0");
  q.validate();
  const std::size_t m = q.q.size();
  std::vector<double> logits(m, -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < m; ++g) {
    if (q.q[g] <= 0.0) continue;
    const double step = stats.per_group_count[g] > 0 ? eta_q * stats.per_group_loss[g] : 0.0;
    logits[g] = std::log(q.q[g]) + step;
    mx = std::max(mx, logits[g]);
  }
  GroupWeights out{std::vector<double>(m, 0.0)};
  double z = 0.0;
  for (std::size_t g = 0; g < m; ++g) {
    if (q.q[g] <= 0.0) continue;
    out.q[g] = std::exp(logits[g] - mx);
    z += out.q[g];
  }
  for (double& v : out.q) v /= z;
  return out;
}

std::vector<double> jtt_weights(std::size_t n, const std::vector<bool>& buffer_mask,
                                double lambda_up) {
  require(lambda_up >= 1.0 && std::isfinite(lambda_up), ErrorKind::config,
          "lambda_up must be >= 1");
  require(buffer_mask.size() == n, ErrorKind::shape, "buffer mask length differs from batch");
  std::vector<double> w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    if (buffer_mask[i]) w[i] = lambda_up;
  return w;
}

double groupjm1_weight(const GroupWeights& q, std::size_t g, std::size_t wg, double alpha) {
  require(g < q.q.size() && wg < q.q.size(), ErrorKind::index, "group index out of range");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::config, "alpha must lie in [0, 1]");
  return alpha > 0.5 ? q.q[g] : q.q[wg];
}

}  // namespace groupmix
