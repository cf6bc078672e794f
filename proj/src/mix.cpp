#include "groupmix/mix.hpp"

#include <algorithm>
#include <cmath>

#include "groupmix/error.hpp"

namespace groupmix {
namespace {

Matrix representations(const Mlp& model, const Dataset& train,
                       std::span<const std::size_t> idx, std::size_t layer_k,
                       ForwardTrace* trace = nullptr) {
  const Matrix x = train.feature_matrix(idx);
  if (layer_k == 0) {
    if (trace) {
      trace->first_layer = 0;
      trace->activations = {x};
    }
    return x;
  }
  return forward_range(model, x, 0, layer_k, trace);
}

}  // namespace

std::string_view to_string(AlphaKind k) {
  switch (k) {
    case AlphaKind::uniform01: return "uniform";
    case AlphaKind::beta: return "beta";
    case AlphaKind::coupled: return "coupled";
    case AlphaKind::fixed: return "fixed";
  }
  return "uniform";
}

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::hidden: return "hidden";
    case LayerKind::output: return "output";
    case LayerKind::random_per_batch: return "random";
  }
  return "input";
}

std::string_view to_string(Pairing p) {
  switch (p) {
    case Pairing::cross_partition: return "cross_partition";
    case Pairing::random_group: return "random_group";
    case Pairing::unconditional: return "unconditional";
  }
  return "cross_partition";
}

std::string_view to_string(AlphaRole r) {
  return r == AlphaRole::minority ? "minority" : "majority";
}

std::string_view to_string(Fallback f) {
  return f == Fallback::pass_through ? "pass_through" : "drop";
}

std::string describe(const MixPolicy& p) {
  std::string s = "alpha=" + std::string(to_string(p.alpha.kind));
  if (p.alpha.kind == AlphaKind::beta)
    s += "(" + std::to_string(p.alpha.a) + "," + std::to_string(p.alpha.b) + ")";
  if (p.alpha.kind == AlphaKind::fixed) s += "(" + std::to_string(p.alpha.value) + ")";
  s += " alpha_on=" + std::string(to_string(p.alpha_on));
  s += " layer=" + std::string(to_string(p.layer.kind));
  if (p.layer.kind == LayerKind::hidden) s += ":" + std::to_string(p.layer.hidden_k);
  s += " pairing=" + std::string(to_string(p.pairing));
  s += " fallback=" + std::string(to_string(p.fallback));
  return s;
}

void MixPolicy::validate(std::size_t num_layers) const {
  if (alpha.kind == AlphaKind::beta)
    require(alpha.a > 0.0 && alpha.b > 0.0, ErrorKind::config, "beta parameters must be > 0");
  if (alpha.kind == AlphaKind::fixed)
    require(alpha.value >= 0.0 && alpha.value <= 1.0, ErrorKind::config,
            "fixed alpha must lie in [0, 1]");
  if (layer.kind == LayerKind::hidden)
    require(layer.hidden_k >= 1 && layer.hidden_k < num_layers, ErrorKind::config,
            "hidden mixing layer " + std::to_string(layer.hidden_k) +
                " is not a hidden layer of a " + std::to_string(num_layers) + "-layer model");
}

std::size_t resolve_layer(const MixLayer& layer, std::size_t num_layers, Rng& rng) {
  require(num_layers >= 1, ErrorKind::config, "model has no layers");
  switch (layer.kind) {
    case LayerKind::input:
      return 0;
    case LayerKind::hidden:
      require(layer.hidden_k >= 1 && layer.hidden_k < num_layers, ErrorKind::config,
              "hidden mixing layer out of range");
      return layer.hidden_k;
    case LayerKind::output:
      return num_layers - 1;
    case LayerKind::random_per_batch:
      return sample_index(rng, num_layers);
  }
  return 0;
}

MixDraw sample_alpha(const MixPolicy& policy, std::size_t epoch, std::size_t total_epochs,
                     std::size_t num_layers, Rng& rng) {
  require(total_epochs >= 1, ErrorKind::precondition, "total_epochs must be >= 1");
  MixDraw d;
  switch (policy.alpha.kind) {
    case AlphaKind::uniform01:
      d.alpha = sample_uniform01(rng);
      break;
    case AlphaKind::beta:
      d.alpha = sample_beta(rng, policy.alpha.a, policy.alpha.b);
      break;
    case AlphaKind::coupled:
      if (2 * epoch < total_epochs)
        d.alpha = sample_uniform01(rng);
      else
        d.alpha = sample_beta(rng, policy.alpha.a, policy.alpha.b);
      break;
    case AlphaKind::fixed:
      d.alpha = policy.alpha.value;
      break;
  }
  d.minority_weight = policy.alpha_on == AlphaRole::minority ? d.alpha : 1.0 - d.alpha;
  d.layer_k = resolve_layer(policy.layer, num_layers, rng);
  return d;
}

PairingPools build_pools(const Dataset& train, const ErrorBuffer& buffer) {
  PairingPools p;
  p.pairing = Pairing::cross_partition;
  const std::vector<bool> in_buffer = buffer.mask(train.size());
  p.reservoirs.assign(train.num_classes(), std::vector<std::vector<std::size_t>>(2));
  p.slot_of.resize(train.size());
  p.slot_names.assign(train.num_classes(), {"majority", "minority"});
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int slot = in_buffer[i] ? 1 : 0;
    p.slot_of[i] = slot;
    p.reservoirs[static_cast<std::size_t>(train.label(i))][slot].push_back(i);
  }
  p.pairable.resize(train.num_classes());
  for (std::size_t y = 0; y < train.num_classes(); ++y)
    p.pairable[y] = !p.reservoirs[y][0].empty() && !p.reservoirs[y][1].empty();
  return p;
}

PairingPools build_group_pools(const Dataset& train) {
  PairingPools p;
  p.pairing = Pairing::random_group;
  const std::vector<GroupId>& groups = train.groups();
  p.reservoirs.assign(train.num_classes(), {});
  std::vector<int> slot_in_class(groups.size(), -1);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& slots = p.reservoirs.at(static_cast<std::size_t>(groups[g].y));
    slot_in_class[g] = static_cast<int>(slots.size());
    slots.emplace_back();
  }
  p.slot_names.assign(train.num_classes(), {});
  for (std::size_t g = 0; g < groups.size(); ++g)
    p.slot_names[static_cast<std::size_t>(groups[g].y)].push_back(to_string(groups[g]));
  p.slot_of.resize(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const GroupId gid = train.group(i);
    const auto g = static_cast<std::size_t>(
        std::lower_bound(groups.begin(), groups.end(), gid) - groups.begin());
    p.slot_of[i] = slot_in_class[g];
    p.reservoirs[static_cast<std::size_t>(gid.y)][static_cast<std::size_t>(slot_in_class[g])]
        .push_back(i);
  }
  p.pairable.resize(train.num_classes());
  for (std::size_t y = 0; y < train.num_classes(); ++y) {
    std::size_t nonempty = 0;
    for (const auto& r : p.reservoirs[y]) nonempty += r.empty() ? 0 : 1;
    p.pairable[y] = nonempty >= 2;
  }
  return p;
}

std::pair<std::vector<double>, std::vector<double>> mix_pair(std::span<const double> h_min,
                                                             std::span<const double> h_maj,
                                                             int y, std::size_t num_classes,
                                                             const MixDraw& draw) {
  require(h_min.size() == h_maj.size(), ErrorKind::shape, "endpoint widths differ");
  require(y >= 0 && static_cast<std::size_t>(y) < num_classes, ErrorKind::index,
          "class out of range");
  const double w = draw.minority_weight;
  std::vector<double> h(h_min.size());
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = w * h_min[j] + (1.0 - w) * h_maj[j];
  std::vector<double> t(num_classes, 0.0);
  t[static_cast<std::size_t>(y)] = 1.0;
  return {std::move(h), std::move(t)};
}

std::pair<std::vector<double>, std::vector<double>> mixup_unconditional(
    std::span<const double> h_i, int y_i, std::span<const double> h_j, int y_j, double alpha,
    std::size_t num_classes) {
  require(h_i.size() == h_j.size(), ErrorKind::shape, "endpoint widths differ");
  require(y_i >= 0 && y_j >= 0 && static_cast<std::size_t>(std::max(y_i, y_j)) < num_classes,
          ErrorKind::index, "class out of range");
  std::vector<double> h(h_i.size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = alpha * h_i[k] + (1.0 - alpha) * h_j[k];
  std::vector<double> t(num_classes, 0.0);
  t[static_cast<std::size_t>(y_i)] += alpha;
  t[static_cast<std::size_t>(y_j)] += 1.0 - alpha;
  return {std::move(h), std::move(t)};
}

MixedBatch assemble_mixed_batch(const Mlp& model, const Dataset& train,
                                std::vector<std::size_t> anchors,
                                std::vector<std::size_t> partners,
                                std::vector<double> anchor_weight, std::size_t layer_k,
                                bool soft_targets) {
  require(anchors.size() == partners.size() && anchors.size() == anchor_weight.size(),
          ErrorKind::shape, "pair lists differ in length");
  MixedBatch mb;
  mb.layer_k = layer_k;
  mb.anchors = std::move(anchors);
  mb.partners = std::move(partners);
  mb.anchor_weight = std::move(anchor_weight);
  mb.mixed.resize(mb.anchors.size());
  for (std::size_t r = 0; r < mb.anchors.size(); ++r)
    mb.mixed[r] = mb.anchors[r] != mb.partners[r] && mb.anchor_weight[r] != 1.0;
  if (mb.anchors.empty()) return mb;

  const Matrix ra = representations(model, train, mb.anchors, layer_k);
  const Matrix rp = representations(model, train, mb.partners, layer_k);
  mb.inputs = Matrix(ra.rows(), ra.cols());
  mb.targets = Matrix(ra.rows(), train.num_classes());
  for (std::size_t r = 0; r < ra.rows(); ++r) {
    const double w = mb.anchor_weight[r];
    for (std::size_t j = 0; j < ra.cols(); ++j) mb.inputs(r, j) = w * ra(r, j) + (1.0 - w) * rp(r, j);
    const auto ya = static_cast<std::size_t>(train.label(mb.anchors[r]));
    const auto yp = static_cast<std::size_t>(train.label(mb.partners[r]));
    if (soft_targets) {
      mb.targets(r, ya) += w;
      mb.targets(r, yp) += 1.0 - w;
    } else {
      require(ya == yp, ErrorKind::precondition, "class-conditional pair spans two classes");
      mb.targets(r, ya) = 1.0;
    }
  }
  return mb;
}

MixedBatch make_mixed_batch(const Mlp& model, const Dataset& train,
                            std::span<const std::size_t> batch, const PairingPools* pools,
                            const MixPolicy& policy, const MixDraw& draw, Rng& rng) {
  require(!batch.empty(), ErrorKind::empty_batch, "empty batch");
  std::vector<std::size_t> anchors, partners;
  std::vector<double> weights;
  PairingMeta meta;
  anchors.reserve(batch.size());
  partners.reserve(batch.size());
  weights.reserve(batch.size());

  if (policy.pairing == Pairing::unconditional) {
    const std::vector<std::size_t> perm = permutation(batch.size(), rng);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const std::size_t a = batch[r];
      const std::size_t p = batch[perm[r]];
      anchors.push_back(a);
      partners.push_back(p);
      weights.push_back(draw.minority_weight);
      ++meta.pair_counts["y=" + std::to_string(train.label(a)) + "|y=" +
                         std::to_string(train.label(p))];
    }
    MixedBatch mb = assemble_mixed_batch(model, train, std::move(anchors), std::move(partners),
                                         std::move(weights), draw.layer_k, true);
    mb.meta = std::move(meta);
    return mb;
  }

  require(pools != nullptr && pools->pairing == policy.pairing, ErrorKind::precondition,
          "pairing pools do not match the mixing policy");
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t a = batch[r];
    const auto y = static_cast<std::size_t>(train.label(a));
    const int slot = pools->slot_of.at(a);
    if (!pools->pairable[y]) {
      if (policy.fallback == Fallback::drop) {
        ++meta.dropped;
        continue;
      }
      ++meta.fallback;
      anchors.push_back(a);
      partners.push_back(a);
      weights.push_back(1.0);
      continue;
    }
    const auto& slots = pools->reservoirs[y];
    std::size_t partner_slot = 0;
    double w = 0.0;
    if (policy.pairing == Pairing::cross_partition) {
      partner_slot = slot == 1 ? 0 : 1;
      w = slot == 1 ? draw.minority_weight : 1.0 - draw.minority_weight;
    } else {
      std::vector<std::size_t> others;
      for (std::size_t s = 0; s < slots.size(); ++s)
        if (static_cast<int>(s) != slot && !slots[s].empty()) others.push_back(s);
      partner_slot = others[sample_index(rng, others.size())];
      w = draw.minority_weight;
    }
    const auto& pool = slots[partner_slot];
    const std::size_t p = pool[sample_index(rng, pool.size())];
    anchors.push_back(a);
    partners.push_back(p);
    weights.push_back(w);
    ++meta.pair_counts["y=" + std::to_string(y) + ":" +
                       pools->slot_names[y][static_cast<std::size_t>(slot)] + "|" +
                       pools->slot_names[y][partner_slot]];
  }
  MixedBatch mb = assemble_mixed_batch(model, train, std::move(anchors), std::move(partners),
                                       std::move(weights), draw.layer_k, false);
  mb.meta = std::move(meta);
  return mb;
}

LossResult mixed_loss_and_grads(const Mlp& model, const Dataset& train, const MixedBatch& batch,
                                std::span<const double> weights, double normalizer) {
  require(!batch.anchors.empty(), ErrorKind::empty_batch, "empty mixed batch");
  if (batch.layer_k == 0)
    return weighted_loss_and_grads(model, batch.inputs, batch.targets, weights, 0, normalizer);

  ForwardTrace ta, tp;
  const Matrix ra = representations(model, train, batch.anchors, batch.layer_k, &ta);
  const Matrix rp = representations(model, train, batch.partners, batch.layer_k, &tp);
  Matrix mixed(ra.rows(), ra.cols());
  for (std::size_t r = 0; r < ra.rows(); ++r) {
    const double w = batch.anchor_weight[r];
    for (std::size_t j = 0; j < ra.cols(); ++j) mixed(r, j) = w * ra(r, j) + (1.0 - w) * rp(r, j);
  }
  LossResult res =
      weighted_loss_and_grads(model, mixed, batch.targets, weights, batch.layer_k, normalizer);
  Matrix ua(ra.rows(), ra.cols()), up(ra.rows(), ra.cols());
  for (std::size_t r = 0; r < ra.rows(); ++r) {
    const double w = batch.anchor_weight[r];
    for (std::size_t j = 0; j < ra.cols(); ++j) {
      ua(r, j) = w * res.input_grad(r, j);
      up(r, j) = (1.0 - w) * res.input_grad(r, j);
    }
  }
  backprop_trace(model, ta, ua, res.grads);
  backprop_trace(model, tp, up, res.grads);
  return res;
}

}  // namespace groupmix
