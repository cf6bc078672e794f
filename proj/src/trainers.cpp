#include "groupmix/trainers.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>

#include "groupmix/error.hpp"
#include "groupmix/eval.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {
namespace {

using StepFn = std::function<double(Mlp&, std::span<const std::size_t>, std::size_t epoch,
                                    std::size_t batch_index, EpochRecord&)>;
using EpochEndFn = std::function<void(EpochRecord&)>;

std::vector<std::size_t> layer_widths(const TrainConfig& cfg, const Dataset& train) {
  std::vector<std::size_t> w = {train.dim()};
  w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
  w.push_back(train.num_classes());
  return w;
}

Selection resolve_criterion(const TrainConfig& cfg, const Dataset& val) {
  if (cfg.selection == Selection::automatic)
    return val.exposes_groups() ? Selection::worst : Selection::average;
  if (cfg.selection == Selection::worst)
    require(val.exposes_groups(), ErrorKind::config,
            "worst-group model selection needs group labels on the validation split");
  return cfg.selection;
}

void check_inputs(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  cfg.validate();
  require(train.split() == Split::train, ErrorKind::config, "training data must be a train split");
  require(train.annotation() == cfg.annotation && val.annotation() == cfg.annotation,
          ErrorKind::config,
          "dataset annotation level differs from the configured level " +
              std::string(to_string(cfg.annotation)));
  require(train.dim() == val.dim() && train.num_classes() == val.num_classes(),
          ErrorKind::config, "train and validation splits differ in shape");
}

Matrix gather_targets(const Dataset& ds, std::span<const std::size_t> idx) {
  return one_hot(ds.labels(idx), ds.num_classes());
}

TrainResult run_loop(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                     RunHistory history, const StepFn& step, const EpochEndFn& on_epoch_end = {}) {
  history.method = cfg.method;
  history.criterion = resolve_criterion(cfg, val);
  if (val.exposes_groups()) history.val_groups = val.groups();

  Rng init = make_rng(cfg.seed, "init");
  Mlp model = Mlp::make(layer_widths(cfg, train), init);
  cfg.mix.validate(model.num_layers());
  Mlp best = model;
  double best_score = 0.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle = make_rng(cfg.seed, "shuffle", {epoch});
    const std::vector<std::size_t> order = permutation(train.size(), shuffle);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      loss_sum += step(model, idx, epoch, b, rec);
      ++n_batches;
    }
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    if (on_epoch_end) on_epoch_end(rec);

    const VisibleMetrics vm = evaluate_visible(model, val);
    rec.val_avg = vm.average_accuracy;
    rec.val_worst = vm.worst_group_accuracy;
    rec.val_per_group = vm.per_group_accuracy;
    const double score = history.criterion == Selection::worst
                             ? vm.worst_group_accuracy.value_or(vm.average_accuracy)
                             : vm.average_accuracy;
    if (history.selected_epoch == 0 || score > best_score) {
      best_score = score;
      best = model;
      history.selected_epoch = rec.epoch;
    }
    history.epochs.push_back(std::move(rec));
  }
  return {std::move(best), std::move(history)};
}

std::vector<bool> oracle_mask_from_train(const Dataset& train) {
  require(train.exposes_partition(), ErrorKind::config,
          "oracle partitions need fine_grained or coarse annotation on train");
  std::vector<bool> mask(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    mask[i] = train.partition(i) == Partition::minority;
  return mask;
}

// Groups of a batch, read through the public view.
std::vector<GroupId> batch_groups(const Dataset& train, std::span<const std::size_t> idx) {
  std::vector<GroupId> g(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) g[r] = train.group(idx[r]);
  return g;
}

std::string alpha_mapping(const MixPolicy& p) {
  return "mix policy: " + describe(p) +
         (p.alpha_on == AlphaRole::minority ? " (minority_weight = alpha)"
                                            : " (minority_weight = 1 - alpha)");
}

TrainResult mixing_loop(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                        RunHistory history, const PairingPools* pools) {
  history.log.push_back(alpha_mapping(cfg.mix));
  const std::size_t n_layers = cfg.hidden.size() + 1;
  StepFn step = [&](Mlp& model, std::span<const std::size_t> idx, std::size_t epoch,
                    std::size_t b, EpochRecord& rec) {
    Rng rng = make_rng(cfg.seed, "mix", {epoch, b});
    const MixDraw draw = sample_alpha(cfg.mix, epoch, cfg.epochs, n_layers, rng);
    const MixedBatch mb = make_mixed_batch(model, train, idx, pools, cfg.mix, draw, rng);
    rec.mix_fallback += mb.meta.fallback + mb.meta.dropped;
    for (const auto& [k, v] : mb.meta.pair_counts) rec.mix_pairs[k] += v;
    if (mb.anchors.empty()) return 0.0;
    const std::vector<double> w(mb.anchors.size(), 1.0);
    const LossResult res =
        mixed_loss_and_grads(model, train, mb, w, static_cast<double>(mb.anchors.size()));
    sgd_step(model, res.grads, cfg.lr, cfg.weight_decay);
    return res.loss;
  };
  return run_loop(cfg, train, val, std::move(history), step);
}

TrainResult phase_two(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                      const ErrorBuffer& buffer) {
  RunHistory history;
  history.buffer = buffer;
  if (cfg.method == Method::jtt) {
    const std::vector<bool> mask = buffer.mask(train.size());
    StepFn step = [&](Mlp& model, std::span<const std::size_t> idx, std::size_t, std::size_t,
                      EpochRecord&) {
      std::vector<bool> bm(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) bm[r] = mask[idx[r]];
      const std::vector<double> w = jtt_weights(idx.size(), bm, cfg.lambda_up);
      const LossResult res =
          loss_and_grads(model, train.feature_matrix(idx), gather_targets(train, idx), w, 0);
      sgd_step(model, res.grads, cfg.lr, cfg.weight_decay);
      return res.loss;
    };
    return run_loop(cfg, train, val, std::move(history), step);
  }
  require(cfg.method == Method::jm1, ErrorKind::config, "phase II needs jtt or jm1");
  const PairingPools pools = build_pools(train, buffer);
  for (std::size_t y = 0; y < pools.num_classes(); ++y)
    if (!pools.pairable[y])
      history.log.push_back("class " + std::to_string(y) +
                            " lies in a single partition; its samples are not mixed");
  return mixing_loop(cfg, train, val, std::move(history), &pools);
}

double probe_score(const TrainResult& r) {
  const EpochRecord& e = r.history.epochs.at(r.history.selected_epoch - 1);
  return r.history.criterion == Selection::worst ? e.val_worst.value_or(e.val_avg) : e.val_avg;
}

TrainResult two_phase(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  BufferMode mode = cfg.buffer;
  if (mode == BufferMode::automatic)
    mode = train.exposes_partition() ? BufferMode::oracle : BufferMode::identified;

  if (mode == BufferMode::oracle) {
    const ErrorBuffer buffer = buffer_from_oracle(oracle_mask_from_train(train));
    TrainResult r = phase_two(cfg, train, val, buffer);
    r.history.log.insert(r.history.log.begin(),
                         "buffer: oracle, " + std::to_string(buffer.indices.size()) + " samples");
    return r;
  }

  IdentificationConfig id = cfg.identification;
  id.seed = derive_seed(cfg.seed, "identification");
  std::vector<std::string> notes;
  if (!val.exposes_groups() && id.fixed_epoch == 0) {
    id.fixed_epoch = std::min<std::size_t>(2, id.epochs);
    notes.push_back("no validation groups: identification epoch defaulted to T=" +
                    std::to_string(id.fixed_epoch));
  }
  Phase2Probe probe = [&](const ErrorBuffer& candidate) {
    TrainConfig pc = cfg;
    pc.seed = derive_seed(cfg.seed, "probe", {candidate.epoch_T});
    return probe_score(phase_two(pc, train, val, candidate));
  };
  IdentificationResult ident = run_identification(train, &val, id, probe);
  TrainResult r = phase_two(cfg, train, val, ident.buffer);
  r.history.identification = std::move(ident.history);
  notes.push_back("buffer: identified at T=" + std::to_string(ident.buffer.epoch_T) + ", " +
                  std::to_string(ident.buffer.indices.size()) + " samples");
  r.history.log.insert(r.history.log.begin(), notes.begin(), notes.end());
  return r;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::erm: return "erm";
    case Method::mixup: return "mixup";
    case Method::cmixup: return "cmixup";
    case Method::jtt: return "jtt";
    case Method::jm1: return "jm1";
    case Method::groupdro: return "groupdro";
    case Method::groupjm1: return "groupjm1";
  }
  return "erm";
}

Method parse_method(std::string_view s) {
  for (Method m : {Method::erm, Method::mixup, Method::cmixup, Method::jtt, Method::jm1,
                   Method::groupdro, Method::groupjm1})
    if (to_string(m) == s) return m;
  fail(ErrorKind::config, "unknown method '" + std::string(s) + "'");
}

std::string_view to_string(Selection s) {
  switch (s) {
    case Selection::automatic: return "auto";
    case Selection::average: return "avg";
    case Selection::worst: return "worst";
  }
  return "auto";
}

std::string_view to_string(BufferMode b) {
  switch (b) {
    case BufferMode::automatic: return "auto";
    case BufferMode::oracle: return "oracle";
    case BufferMode::identified: return "identified";
  }
  return "auto";
}

Selection parse_selection_criterion(std::string_view s) {
  if (s == "auto") return Selection::automatic;
  if (s == "avg") return Selection::average;
  if (s == "worst") return Selection::worst;
  fail(ErrorKind::config, "unknown selection criterion '" + std::string(s) + "'");
}

BufferMode parse_buffer_mode(std::string_view s) {
  if (s == "auto") return BufferMode::automatic;
  if (s == "oracle") return BufferMode::oracle;
  if (s == "identified") return BufferMode::identified;
  fail(ErrorKind::config, "unknown buffer mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::config, "epochs must be >= 1");
  require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
  require(lr >= 0.0, ErrorKind::config, "lr must be >= 0");
  require(weight_decay >= 0.0, ErrorKind::config, "weight_decay must be >= 0");
  require(eta_q >= 0.0, ErrorKind::config, "eta_q must be >= 0");
  require(lambda_up >= 1.0, ErrorKind::config, "lambda_up must be >= 1");
  for (std::size_t h : hidden) require(h >= 1, ErrorKind::config, "hidden widths must be >= 1");

  const std::string m(to_string(method));
  const std::string a(to_string(annotation));
  auto incompatible = [&](const char* needs) {
    fail(ErrorKind::config, "method " + m + " is incompatible with annotation=" + a + " (" +
                                needs + ")");
  };
  switch (method) {
    case Method::groupdro:
    case Method::groupjm1:
    case Method::cmixup:
      if (annotation != AnnotationLevel::fine_grained) incompatible("needs fine_grained");
      break;
    case Method::jtt:
      if (annotation != AnnotationLevel::validation_only && annotation != AnnotationLevel::coarse)
        incompatible("needs validation_only or coarse");
      break;
    case Method::jm1:
    case Method::erm:
    case Method::mixup:
      break;
  }
  if (buffer == BufferMode::oracle && (method == Method::jtt || method == Method::jm1) &&
      annotation != AnnotationLevel::fine_grained && annotation != AnnotationLevel::coarse)
    incompatible("oracle buffers need fine_grained or coarse");
  if (method == Method::mixup && mix.pairing != Pairing::unconditional)
    fail(ErrorKind::config, "mixup uses unconditional pairing");
  if (method == Method::cmixup && mix.pairing != Pairing::random_group)
    fail(ErrorKind::config, "cmixup uses random_group pairing");
  if (method == Method::jm1 && mix.pairing != Pairing::cross_partition)
    fail(ErrorKind::config, "jm1 uses cross_partition pairing");
}

TrainConfig default_config(Method m) {
  TrainConfig c;
  c.method = m;
  switch (m) {
    case Method::erm:
      c.selection = Selection::average;
      break;
    case Method::mixup:
      c.mix.pairing = Pairing::unconditional;
      c.annotation = AnnotationLevel::none;
      break;
    case Method::cmixup:
      c.mix.pairing = Pairing::random_group;
      break;
    case Method::jtt:
      c.annotation = AnnotationLevel::validation_only;
      break;
    case Method::jm1:
      c.mix.alpha = AlphaDist::coupled();
      c.mix.alpha_on = AlphaRole::majority;
      c.annotation = AnnotationLevel::validation_only;
      break;
    case Method::groupdro:
      break;
    case Method::groupjm1:
      c.mix.alpha = AlphaDist::uniform();
      c.mix.alpha_on = AlphaRole::majority;
      break;
  }
  return c;
}

TrainResult train_erm(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  check_inputs(cfg, train, val);
  StepFn step = [&](Mlp& model, std::span<const std::size_t> idx, std::size_t, std::size_t,
                    EpochRecord&) {
    const std::vector<double> w(idx.size(), 1.0);
    const LossResult res =
        loss_and_grads(model, train.feature_matrix(idx), gather_targets(train, idx), w, 0);
    sgd_step(model, res.grads, cfg.lr, cfg.weight_decay);
    return res.loss;
  };
  return run_loop(cfg, train, val, {}, step);
}

TrainResult train_jtt(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  require(cfg.method == Method::jtt, ErrorKind::config, "train_jtt needs method jtt");
  check_inputs(cfg, train, val);
  return two_phase(cfg, train, val);
}

TrainResult train_jm1(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  require(cfg.method == Method::jm1, ErrorKind::config, "train_jm1 needs method jm1");
  check_inputs(cfg, train, val);
  return two_phase(cfg, train, val);
}

TrainResult train_with_buffer(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                              const ErrorBuffer& buffer) {
  check_inputs(cfg, train, val);
  return phase_two(cfg, train, val, buffer);
}

TrainResult train_mixup_baselines(const TrainConfig& cfg, const Dataset& train,
                                  const Dataset& val) {
  require(cfg.method == Method::mixup || cfg.method == Method::cmixup, ErrorKind::config,
          "train_mixup_baselines needs method mixup or cmixup");
  check_inputs(cfg, train, val);
  if (cfg.method == Method::mixup) return mixing_loop(cfg, train, val, {}, nullptr);
  const PairingPools pools = build_group_pools(train);
  return mixing_loop(cfg, train, val, {}, &pools);
}

TrainResult train_groupdro(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  require(cfg.method == Method::groupdro, ErrorKind::config, "train_groupdro needs groupdro");
  check_inputs(cfg, train, val);
  const std::vector<GroupId> groups = train.groups();
  {
    std::vector<std::size_t> cnt(groups.size(), 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const GroupId g = train.group(i);
      ++cnt[static_cast<std::size_t>(std::lower_bound(groups.begin(), groups.end(), g) -
                                     groups.begin())];
    }
    for (std::size_t g = 0; g < groups.size(); ++g)
      require(cnt[g] > 0, ErrorKind::config,
              "group " + to_string(groups[g]) + " is absent from the train split");
  }
  GroupWeights q = GroupWeights::uniform(groups.size());
  RunHistory history;
  history.train_groups = groups;
  StepFn step = [&](Mlp& model, std::span<const std::size_t> idx, std::size_t, std::size_t,
                    EpochRecord&) {
    const Matrix x = train.feature_matrix(idx);
    const Matrix t = gather_targets(train, idx);
    const std::vector<GroupId> gid = batch_groups(train, idx);
    const BatchGroupStats stats = per_group_losses(sample_losses(model, x, t), gid, groups);
    std::vector<double> w(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t g = stats.index_of(gid[r]);
      w[r] = q.q[g] / static_cast<double>(stats.per_group_count[g]);
    }
    const LossResult res = weighted_loss_and_grads(model, x, t, w, 0, 1.0);
    sgd_step(model, res.grads, cfg.lr, cfg.weight_decay);
    q = groupdro_update(q, stats, cfg.eta_q);
    return res.loss;
  };
  EpochEndFn end = [&](EpochRecord& rec) { rec.q = q.q; };
  return run_loop(cfg, train, val, std::move(history), step, end);
}

TrainResult train_groupjm1(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  require(cfg.method == Method::groupjm1, ErrorKind::config, "train_groupjm1 needs groupjm1");
  check_inputs(cfg, train, val);
  const std::vector<GroupId> groups = train.groups();
  std::vector<std::vector<std::size_t>> members(groups.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const GroupId g = train.group(i);
    members[static_cast<std::size_t>(std::lower_bound(groups.begin(), groups.end(), g) -
                                     groups.begin())]
        .push_back(i);
  }
  for (std::size_t g = 0; g < groups.size(); ++g)
    require(!members[g].empty(), ErrorKind::config,
            "group " + to_string(groups[g]) + " is absent from the train split");

  GroupWeights q = GroupWeights::uniform(groups.size());
  RunHistory history;
  history.train_groups = groups;
  history.log.push_back(alpha_mapping(cfg.mix) +
                        "; alpha multiplies the non-worst sample, q updated on unmixed losses");
  const std::size_t n_layers = cfg.hidden.size() + 1;
  StepFn step = [&](Mlp& model, std::span<const std::size_t> idx, std::size_t epoch,
                    std::size_t b, EpochRecord& rec) {
    const Matrix x = train.feature_matrix(idx);
    const Matrix t = gather_targets(train, idx);
    const std::vector<GroupId> gid = batch_groups(train, idx);
    const BatchGroupStats stats = per_group_losses(sample_losses(model, x, t), gid, groups);
    const std::size_t wg = stats.worst;

    Rng rng = make_rng(cfg.seed, "mix", {epoch, b});
    const MixDraw draw = sample_alpha(cfg.mix, epoch, cfg.epochs, n_layers, rng);
    const double alpha = 1.0 - draw.minority_weight;  // coefficient on h_g
    const auto& wg_pool = members[wg];
    std::vector<std::size_t> anchors, partners;
    std::vector<double> aw, w;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t g = stats.index_of(gid[r]);
      const double n_g = static_cast<double>(stats.per_group_count[g]);
      anchors.push_back(idx[r]);
      if (g != wg && gid[r].y == groups[wg].y) {
        const std::size_t p = wg_pool[sample_index(rng, wg_pool.size())];
        partners.push_back(p);
        aw.push_back(alpha);
        w.push_back(groupjm1_weight(q, g, wg, alpha) / n_g);
        ++rec.mix_pairs["y=" + std::to_string(gid[r].y) + ":" + to_string(groups[g]) + "|" +
                        to_string(groups[wg])];
      } else {
        partners.push_back(idx[r]);
        aw.push_back(1.0);
        w.push_back(q.q[g] / n_g);
        if (g != wg) ++rec.mix_fallback;
      }
    }
    const MixedBatch mb =
        assemble_mixed_batch(model, train, anchors, partners, aw, draw.layer_k, false);
    const LossResult res = mixed_loss_and_grads(model, train, mb, w, 1.0);
    sgd_step(model, res.grads, cfg.lr, cfg.weight_decay);
    q = groupdro_update(q, stats, cfg.eta_q);
    return res.loss;
  };
  EpochEndFn end = [&](EpochRecord& rec) { rec.q = q.q; };
  return run_loop(cfg, train, val, std::move(history), step, end);
}

TrainResult train(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  switch (cfg.method) {
    case Method::erm: return train_erm(cfg, train, val);
    case Method::mixup:
    case Method::cmixup: return train_mixup_baselines(cfg, train, val);
    case Method::jtt: return train_jtt(cfg, train, val);
    case Method::jm1: return train_jm1(cfg, train, val);
    case Method::groupdro: return train_groupdro(cfg, train, val);
    case Method::groupjm1: return train_groupjm1(cfg, train, val);
  }
  fail(ErrorKind::config, "unknown method");
}

void write_history(const RunHistory& history, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  const bool mixing = history.method == Method::mixup || history.method == Method::cmixup ||
                      history.method == Method::jm1 || history.method == Method::groupjm1;
  os << "epoch,train_loss,val_avg,val_worst";
  for (const GroupId& g : history.val_groups) os << ",val_acc_" << to_string(g);
  for (const GroupId& g : history.train_groups) os << ",q_" << to_string(g);
  if (mixing) os << ",mix_fallback,mix_pairs";
  os << ",selected\n";
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const EpochRecord& e : history.epochs) {
    os << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_avg) << ','
       << (e.val_worst ? num(*e.val_worst) : "");
    for (std::size_t g = 0; g < history.val_groups.size(); ++g)
      os << ',' << (g < e.val_per_group.size() ? num(e.val_per_group[g]) : "");
    for (std::size_t g = 0; g < history.train_groups.size(); ++g)
      os << ',' << (g < e.q.size() ? num(e.q[g]) : "");
    if (mixing) {
      os << ',' << e.mix_fallback << ',';
      bool first = true;
      for (const auto& [k, v] : e.mix_pairs) {
        os << (first ? "" : ";") << k << '=' << v;
        first = false;
      }
    }
    os << ',' << (e.epoch == history.selected_epoch ? 1 : 0) << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

}  // namespace groupmix
