#include "groupmix/identify.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>

#include "groupmix/error.hpp"
#include "groupmix/eval.hpp"
#include "groupmix/nn.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {
namespace {

std::vector<std::size_t> misclassified(const Mlp& mlp, const Matrix& x, const std::vector<int>& y) {
  const std::vector<int> pred = predict(mlp, x);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (pred[i] != y[i]) out.push_back(i);
  return out;
}

}  // namespace

std::vector<bool> ErrorBuffer::mask(std::size_t n) const {
  std::vector<bool> m(n, false);
  for (std::size_t i : indices) {
    require(i < n, ErrorKind::index, "buffer index " + std::to_string(i) + " out of range");
    m[i] = true;
  }
  return m;
}

std::string_view to_string(BufferSource s) {
  return s == BufferSource::oracle ? "oracle" : "identified";
}

std::string_view to_string(TSelection s) {
  switch (s) {
    case TSelection::fixed: return "fixed";
    case TSelection::phase1_val: return "phase1_val";
    case TSelection::exhaustive: return "exhaustive";
  }
  return "fixed";
}

TSelection parse_selection(std::string_view s) {
  if (s == "fixed") return TSelection::fixed;
  if (s == "phase1_val") return TSelection::phase1_val;
  if (s == "exhaustive") return TSelection::exhaustive;
  fail(ErrorKind::config, "unknown identification selection '" + std::string(s) + "'");
}

IdentificationResult run_identification(const Dataset& train, const Dataset* val,
                                        const IdentificationConfig& cfg,
                                        const Phase2Probe& probe) {
  require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.lr >= 0.0, ErrorKind::config,
          "identification needs epochs >= 1, batch_size >= 1 and lr >= 0");
  const bool val_groups = val != nullptr && val->exposes_groups();

  TSelection mode = cfg.selection;
  if (cfg.fixed_epoch > 0) mode = TSelection::fixed;
  if (mode != TSelection::fixed && !val_groups) {
    fail(ErrorKind::config,
         "identification epoch selection needs a group-annotated validation split or a fixed T");
  }
  if (mode == TSelection::exhaustive)
    require(static_cast<bool>(probe), ErrorKind::config,
            "exhaustive T selection needs a phase-II probe");
  if (mode == TSelection::fixed)
    require(cfg.fixed_epoch >= 1 && cfg.fixed_epoch <= cfg.epochs, ErrorKind::config,
            "fixed identification epoch must lie in [1, epochs]");

  std::vector<std::size_t> candidates;
  if (mode == TSelection::fixed) {
    candidates = {cfg.fixed_epoch};
  } else if (mode == TSelection::exhaustive) {
    for (std::size_t t : cfg.grid)
      if (t >= 1 && t <= cfg.epochs) candidates.push_back(t);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    require(!candidates.empty(), ErrorKind::config, "no identification grid epoch within range");
  } else {
    for (std::size_t t = 1; t <= cfg.epochs; ++t) candidates.push_back(t);
  }
  const std::size_t last_epoch = mode == TSelection::phase1_val ? cfg.epochs : candidates.back();

  const Matrix x = train.feature_matrix();
  const std::vector<int> y = train.labels();
  const Matrix targets = one_hot(y, train.num_classes());

  std::vector<std::size_t> widths = {train.dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(train.num_classes());
  Rng init = make_rng(cfg.seed, "phase1-init");
  Mlp mlp = Mlp::make(widths, init);

  IdentificationResult result;
  std::vector<std::vector<std::size_t>> errors_at(last_epoch + 1);
  bool any_error = false;
  for (std::size_t epoch = 1; epoch <= last_epoch; ++epoch) {
    Rng shuffle = make_rng(cfg.seed, "phase1-shuffle", {epoch});
    const std::vector<std::size_t> order = permutation(train.size(), shuffle);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix bx(idx.size(), x.cols()), bt(idx.size(), targets.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), bx.row(r).begin());
        std::copy(targets.row(idx[r]).begin(), targets.row(idx[r]).end(), bt.row(r).begin());
      }
      const std::vector<double> w(idx.size(), 1.0);
      const LossResult lr = loss_and_grads(mlp, bx, bt, w, 0);
      sgd_step(mlp, lr.grads, cfg.lr, cfg.weight_decay);
    }
    IdentificationEpoch rec;
    rec.epoch = epoch;
    errors_at[epoch] = misclassified(mlp, x, y);
    rec.train_error_count = errors_at[epoch].size();
    any_error = any_error || rec.train_error_count > 0;
    if (val_groups) rec.val_worst_group_acc = evaluate_visible(mlp, *val).worst_group_accuracy;
    result.history.push_back(rec);
  }
  require(any_error, ErrorKind::empty_buffer,
          "phase I classified every training sample correctly at every epoch; use a smaller "
          "model, fewer epochs or a harder dataset so early errors exist");

  std::size_t best_t = 0;
  double best = 0.0;
  for (std::size_t t : candidates) {
    if (errors_at[t].empty()) continue;
    double score = 0.0;
    if (mode == TSelection::fixed) {
      score = 0.0;
    } else if (mode == TSelection::phase1_val) {
      score = result.history[t - 1].val_worst_group_acc.value_or(0.0);
    } else {
      ErrorBuffer candidate{errors_at[t], t, BufferSource::identified};
      score = probe(candidate);
    }
    result.history[t - 1].criterion = score;
    if (best_t == 0 || score > best) {
      best_t = t;
      best = score;
    }
  }
  require(best_t != 0, ErrorKind::empty_buffer,
          "every candidate identification epoch produced an empty error buffer");
  result.buffer = {errors_at[best_t], best_t, BufferSource::identified};
  return result;
}

ErrorBuffer buffer_from_oracle(const std::vector<bool>& mask) {
  ErrorBuffer b;
  b.source = BufferSource::oracle;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) b.indices.push_back(i);
  require(!b.indices.empty(), ErrorKind::empty_buffer, "oracle mask marks no minority sample");
  return b;
}

IdentificationQuality identification_quality(const ErrorBuffer& buffer,
                                              const std::vector<bool>& oracle_mask) {
  IdentificationQuality q;
  for (bool m : oracle_mask) q.minority_total += m ? 1 : 0;
  for (std::size_t i : buffer.indices) {
    require(i < oracle_mask.size(), ErrorKind::index, "buffer index out of range");
    if (oracle_mask[i])
      ++q.S;
    else
      ++q.NS;
  }
  q.precision = q.S + q.NS > 0 ? static_cast<double>(q.S) / static_cast<double>(q.S + q.NS) : 0.0;
  q.recall = q.minority_total > 0
                 ? static_cast<double>(q.S) / static_cast<double>(q.minority_total)
                 : 0.0;
  return q;
}

void write_buffer(const ErrorBuffer& buffer, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << "# epoch_T=" << buffer.epoch_T << "\n# source=" << to_string(buffer.source) << '\n';
  for (std::size_t i : buffer.indices) os << i << '\n';
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

ErrorBuffer read_buffer(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  ErrorBuffer b;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# epoch_T=", 0) == 0) {
      b.epoch_T = std::stoul(line.substr(10));
    } else if (line.rfind("# source=", 0) == 0) {
      const std::string s = line.substr(9);
      require(s == "oracle" || s == "identified", ErrorKind::data, "bad buffer source " + s);
      b.source = s == "oracle" ? BufferSource::oracle : BufferSource::identified;
    } else {
      b.indices.push_back(std::stoul(line));
    }
  }
  std::sort(b.indices.begin(), b.indices.end());
  return b;
}

void write_identification_history(const std::vector<IdentificationEpoch>& history,
                                  const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << "epoch,train_error_count,val_worst_group_acc\n";
  for (const IdentificationEpoch& e : history) {
    os << e.epoch << ',' << e.train_error_count << ',';
    if (e.val_worst_group_acc) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *e.val_worst_group_acc);
      os << buf;
    }
    os << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

}  // namespace groupmix
