#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "groupmix/data.hpp"
#include "groupmix/identify.hpp"
#include "groupmix/nn.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {

enum class AlphaKind { uniform01, beta, coupled, fixed };

/// Distribution of the mixing rate. `coupled` draws U(0,1) for the first
/// half of the epochs and Beta(2,5) for the rest; `fixed` is a point mass.
struct AlphaDist {
  AlphaKind kind = AlphaKind::uniform01;
  double a = 1.0;
  double b = 1.0;
  double value = 1.0;

  static AlphaDist uniform() { return {}; }
  static AlphaDist beta(double a, double b) { return {AlphaKind::beta, a, b, 1.0}; }
  static AlphaDist coupled() { return {AlphaKind::coupled, 2.0, 5.0, 1.0}; }
  static AlphaDist point(double v) { return {AlphaKind::fixed, 1.0, 1.0, v}; }

  bool operator==(const AlphaDist&) const = default;
};

enum class LayerKind { input, hidden, output, random_per_batch };

/// Where the interpolation happens. hidden(k) mixes the representation
/// entering layer k; output mixes the last hidden representation.
struct MixLayer {
  LayerKind kind = LayerKind::input;
  std::size_t hidden_k = 1;

  bool operator==(const MixLayer&) const = default;
};

enum class Pairing { cross_partition, random_group, unconditional };

/// Which endpoint the sampled alpha multiplies.
enum class AlphaRole { minority, majority };

enum class Fallback { pass_through, drop };

struct MixPolicy {
  AlphaDist alpha;
  MixLayer layer;
  Pairing pairing = Pairing::cross_partition;
  AlphaRole alpha_on = AlphaRole::minority;
  Fallback fallback = Fallback::pass_through;

  void validate(std::size_t num_layers) const;
  bool operator==(const MixPolicy&) const = default;
};

std::string_view to_string(AlphaKind k);
std::string_view to_string(LayerKind k);
std::string_view to_string(Pairing p);
std::string_view to_string(AlphaRole r);
std::string_view to_string(Fallback f);
std::string describe(const MixPolicy& p);

/// One per-batch draw. minority_weight multiplies the minority endpoint under
/// cross-partition pairing and the anchor (batch) sample otherwise.
struct MixDraw {
  double alpha = 1.0;
  double minority_weight = 1.0;
  std::size_t layer_k = 0;
};

std::size_t resolve_layer(const MixLayer& layer, std::size_t num_layers, Rng& rng);

MixDraw sample_alpha(const MixPolicy& policy, std::size_t epoch, std::size_t total_epochs,
                     std::size_t num_layers, Rng& rng);

/// Per-class index reservoirs. Under cross-partition pools slot 0 holds the
/// majority and slot 1 the minority partition; under group pools each slot is
/// one group of the class.
struct PairingPools {
  Pairing pairing = Pairing::cross_partition;
  std::vector<std::vector<std::vector<std::size_t>>> reservoirs;  // [class][slot]
  std::vector<int> slot_of;                                       // per train index
  std::vector<std::vector<std::string>> slot_names;               // [class][slot], for metadata
  std::vector<bool> pairable;                                     // per class

  std::size_t num_classes() const { return reservoirs.size(); }
};

/// partition = minority iff the index is in the buffer.
PairingPools build_pools(const Dataset& train, const ErrorBuffer& buffer);

/// Reservoirs keyed by visible group; needs group labels on train.
PairingPools build_group_pools(const Dataset& train);

/// minority_weight h_min + (1 - minority_weight) h_maj with a one-hot target.
std::pair<std::vector<double>, std::vector<double>> mix_pair(std::span<const double> h_min,
                                                             std::span<const double> h_maj,
                                                             int y, std::size_t num_classes,
                                                             const MixDraw& draw);

/// alpha h_i + (1 - alpha) h_j with the matching soft target.
std::pair<std::vector<double>, std::vector<double>> mixup_unconditional(
    std::span<const double> h_i, int y_i, std::span<const double> h_j, int y_j, double alpha,
    std::size_t num_classes);

struct PairingMeta {
  std::map<std::string, std::size_t> pair_counts;  // "y=<y>:<anchor slot>|<partner slot>"
  std::size_t fallback = 0;
  std::size_t dropped = 0;
};

/// A batch of interpolated samples. Row r mixes train samples anchors[r] and
/// partners[r] with coefficient anchor_weight[r] on the anchor, at layer_k.
struct MixedBatch {
  Matrix inputs;  // representations entering layer_k
  Matrix targets;
  std::size_t layer_k = 0;
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> partners;
  std::vector<double> anchor_weight;
  std::vector<bool> mixed;
  PairingMeta meta;
};

/// Interpolates explicit anchor/partner pairs. Targets are one-hot of the
/// anchor class unless soft_targets, in which case labels mix too.
MixedBatch assemble_mixed_batch(const Mlp& model, const Dataset& train,
                                std::vector<std::size_t> anchors,
                                std::vector<std::size_t> partners,
                                std::vector<double> anchor_weight, std::size_t layer_k,
                                bool soft_targets);

/// Pairs every batch sample per policy.pairing and interpolates it. Partners
/// come from the global pools with replacement; unconditional pairing mixes the
/// batch against a shuffle of itself.
MixedBatch make_mixed_batch(const Mlp& model, const Dataset& train,
                            std::span<const std::size_t> batch, const PairingPools* pools,
                            const MixPolicy& policy, const MixDraw& draw, Rng& rng);

/// Loss and gradients of a mixed batch. Below layer_k the gradient flows back
/// through both endpoints' forward passes.
LossResult mixed_loss_and_grads(const Mlp& model, const Dataset& train, const MixedBatch& batch,
                                std::span<const double> weights, double normalizer);

}  // namespace groupmix
