#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "groupmix/data.hpp"
#include "groupmix/identify.hpp"
#include "groupmix/losses.hpp"
#include "groupmix/mix.hpp"
#include "groupmix/nn.hpp"

namespace groupmix {

enum class Method { erm, mixup, cmixup, jtt, jm1, groupdro, groupjm1 };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

/// Model-selection criterion evaluated on the validation split every epoch.
/// automatic = worst-group accuracy when validation groups are visible,
/// average accuracy otherwise.
enum class Selection { automatic, average, worst };

/// Where two-phase methods get their partition. automatic = oracle when the
/// train split exposes partitions (fine_grained, coarse), identified otherwise.
enum class BufferMode { automatic, oracle, identified };

std::string_view to_string(Selection s);
std::string_view to_string(BufferMode b);
Selection parse_selection_criterion(std::string_view s);
BufferMode parse_buffer_mode(std::string_view s);

struct TrainConfig {
  Method method = Method::erm;
  AnnotationLevel annotation = AnnotationLevel::fine_grained;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double weight_decay = 1e-3;
  double lambda_up = 20.0;
  double eta_q = 0.01;
  std::vector<std::size_t> hidden = {32, 32};
  MixPolicy mix;
  Selection selection = Selection::automatic;
  BufferMode buffer = BufferMode::automatic;
  IdentificationConfig identification;
  std::uint64_t seed = 0;

  /// Method/annotation compatibility and hyperparameter ranges.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Per-method defaults: ERM selects on average accuracy; JM1 draws the
/// coupled schedule onto the majority coefficient; GroupJM1 puts alpha on the
/// non-worst sample; the MixUp baselines draw U(0,1) onto the anchor.
TrainConfig default_config(Method m);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_avg = 0.0;
  std::optional<double> val_worst;
  std::vector<double> val_per_group;
  std::vector<double> q;
  std::size_t mix_fallback = 0;
  std::map<std::string, std::size_t> mix_pairs;

  bool operator==(const EpochRecord&) const = default;
};

struct RunHistory {
  Method method = Method::erm;
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;
  Selection criterion = Selection::average;
  std::vector<GroupId> val_groups;    // column order of val_per_group
  std::vector<GroupId> train_groups;  // column order of q
  std::optional<ErrorBuffer> buffer;
  std::vector<IdentificationEpoch> identification;
  std::vector<std::string> log;
};

struct TrainResult {
  Mlp model;  // parameters at the selected epoch
  RunHistory history;
};

TrainResult train_erm(const TrainConfig& cfg, const Dataset& train, const Dataset& val);
TrainResult train_jtt(const TrainConfig& cfg, const Dataset& train, const Dataset& val);
TrainResult train_jm1(const TrainConfig& cfg, const Dataset& train, const Dataset& val);
TrainResult train_groupdro(const TrainConfig& cfg, const Dataset& train, const Dataset& val);
TrainResult train_groupjm1(const TrainConfig& cfg, const Dataset& train, const Dataset& val);
TrainResult train_mixup_baselines(const TrainConfig& cfg, const Dataset& train,
                                  const Dataset& val);

/// Dispatches on cfg.method.
TrainResult train(const TrainConfig& cfg, const Dataset& train, const Dataset& val);

/// Phase II of JTT/JM1 on a given buffer (no identification).
TrainResult train_with_buffer(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                              const ErrorBuffer& buffer);

/// CSV: epoch,train_loss,val_avg,val_worst, then val_acc_<group> columns,
/// q_<group> columns, and mix_fallback,mix_pairs for mixing methods.
void write_history(const RunHistory& history, const std::filesystem::path& path);

}  // namespace groupmix
