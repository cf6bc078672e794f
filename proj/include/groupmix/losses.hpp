#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "groupmix/data.hpp"

namespace groupmix {

/// Per-group weights q on the probability simplex, aligned with a group list.
struct GroupWeights {
  std::vector<double> q;

  static GroupWeights uniform(std::size_t m);
  /// Throws ErrorKind::weight unless entries are >= 0 and sum to 1 (1e-9).
  void validate() const;
};

struct BatchGroupStats {
  std::vector<GroupId> groups;          // sorted, defines the index space
  std::vector<double> per_group_loss;   // 0 for groups absent from the batch
  std::vector<std::size_t> per_group_count;
  std::size_t worst = 0;                // index into groups

  GroupId worst_group() const { return groups.at(worst); }
  std::size_t index_of(GroupId g) const;
};

/// Mean loss per group over the declared group set. Groups absent from the
/// batch have count 0 and are skipped by the worst-group argmax; argmax ties
/// go to the lowest GroupId.
BatchGroupStats per_group_losses(std::span<const double> sample_losses,
                                 std::span<const GroupId> group_ids,
                                 std::span<const GroupId> group_set);

/// Group set taken as the distinct ids in the batch.
BatchGroupStats per_group_losses(std::span<const double> sample_losses,
                                 std::span<const GroupId> group_ids);

/// sum_g p_g l_g; p may not put mass on groups absent from the batch.
double group_average_loss(const BatchGroupStats& stats, const GroupWeights& p);

/// max_g l_g over groups present in the batch.
double dro_loss(const BatchGroupStats& stats);

/// Exponentiated-gradient step q_g <- q_g exp(eta_q l_g), renormalised.
/// Absent groups keep their q_g before renormalisation. Exponents are shifted
/// by their max so large losses cannot overflow.
GroupWeights groupdro_update(const GroupWeights& q, const BatchGroupStats& stats, double eta_q);

/// lambda_up for buffer members, 1 otherwise.
std::vector<double> jtt_weights(std::size_t n, const std::vector<bool>& buffer_mask,
                                double lambda_up);

/// GroupJM1 weight for a sample mixed as alpha h_g + (1 - alpha) h_wg:
/// q_g when alpha > 0.5, q_wg otherwise (the 0.5 tie goes to the worst group).
double groupjm1_weight(const GroupWeights& q, std::size_t g, std::size_t wg, double alpha);

}  // namespace groupmix
