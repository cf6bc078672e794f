#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "groupmix/matrix.hpp"

namespace groupmix {

/// Group g = (c, y): confounder value and class label.
struct GroupId {
  int c = 0;
  int y = 0;

  auto operator<=>(const GroupId&) const = default;
};

std::string to_string(GroupId g);

enum class Partition { majority, minority, unknown };
enum class AnnotationLevel { fine_grained, coarse, validation_only, none };
enum class Split { train, validation, test };

std::string_view to_string(Partition p);
std::string_view to_string(AnnotationLevel a);
std::string_view to_string(Split s);
Partition parse_partition(std::string_view s);
AnnotationLevel parse_annotation(std::string_view s);
Split parse_split(std::string_view s);

struct GroupSpec {
  GroupId group;
  double train_proportion = 0.0;
  double test_proportion = 0.0;
  std::vector<double> mean;
  double sigma = 1.0;

  bool operator==(const GroupSpec&) const = default;
};

struct Sample {
  std::vector<double> features;
  int y = 0;
  int c = 0;
  GroupId group;
  Partition partition = Partition::unknown;
};

/// Counters of group-field reads through the public view. Trainers running
/// without annotation must leave every counter at zero.
struct AccessAudit {
  std::size_t group_reads = 0;
  std::size_t partition_reads = 0;
  std::size_t privileged_views = 0;
  std::size_t forbidden_reads = 0;
};

class GroupTruthView;

/// A split of labelled samples. Group fields (c, g, partition) are visible
/// only as far as the annotation level allows; evaluation code goes through
/// privileged(), which is the only route to withheld truth.
class Dataset {
 public:
  Dataset(std::vector<Sample> samples, std::size_t num_classes, std::vector<GroupId> groups,
          AnnotationLevel annotation, Split split, bool has_truth = true);

  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  Split split() const noexcept { return split_; }
  AnnotationLevel annotation() const noexcept { return annotation_; }
  bool has_truth() const noexcept { return has_truth_; }

  std::span<const double> features(std::size_t i) const;
  int label(std::size_t i) const;
  Matrix feature_matrix() const;
  Matrix feature_matrix(std::span<const std::size_t> indices) const;
  std::vector<int> labels() const;
  std::vector<int> labels(std::span<const std::size_t> indices) const;

  bool exposes_groups() const noexcept;
  bool exposes_partition() const noexcept;

  /// Throws ErrorKind::annotation when groups are withheld.
  GroupId group(std::size_t i) const;
  int confounder(std::size_t i) const;
  const std::vector<GroupId>& groups() const;
  /// Partition::unknown (and a forbidden read) when the level withholds it.
  Partition partition(std::size_t i) const;

  Dataset with_annotation(AnnotationLevel level) const;

  const AccessAudit& audit() const noexcept { return audit_; }
  void reset_audit() const noexcept { audit_ = {}; }

  GroupTruthView privileged() const;

 private:
  friend class GroupTruthView;

  std::vector<Sample> samples_;
  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<GroupId> groups_;
  AnnotationLevel annotation_;
  Split split_;
  bool has_truth_;
  mutable AccessAudit audit_;
};

/// Unrestricted access to group truth, for evaluation and oracles.
class GroupTruthView {
 public:
  explicit GroupTruthView(const Dataset& ds);

  GroupId group(std::size_t i) const { return ds_->samples_.at(i).group; }
  int confounder(std::size_t i) const { return ds_->samples_.at(i).c; }
  Partition partition(std::size_t i) const { return ds_->samples_.at(i).partition; }
  bool is_minority(std::size_t i) const { return partition(i) == Partition::minority; }
  const std::vector<GroupId>& groups() const { return ds_->groups_; }
  const Sample& sample(std::size_t i) const { return ds_->samples_.at(i); }
  std::size_t size() const { return ds_->size(); }

 private:
  const Dataset* ds_;
};

/// Isotropic Gaussian groups, features ~ N(mean, sigma^2 I). Train and
/// validation splits use train proportions, test uses test proportions.
/// Groups with below-average train proportion are minority.
Dataset gen_gaussian_groups(std::span<const GroupSpec> specs, std::size_t n, Split split,
                            std::uint64_t seed,
                            AnnotationLevel annotation = AnnotationLevel::fine_grained);

/// The four-group 2D toy: means (c, y), minority groups (0,1) and (1,0)
/// carrying `minority_share` of train mass, balanced test.
std::vector<GroupSpec> toy_group_specs(double sigma = 0.25, double minority_share = 0.05);

struct SpuriousOptions {
  double mu_core = 1.0;
  double sigma_core = 2.0;
  double mu_spurious = 1.0;
  double sigma_spurious = 0.5;

  bool operator==(const SpuriousOptions&) const = default;
};

/// Binary task whose confounder c agrees with y at rate rho_train on the
/// train and validation splits and at rate 0.5 on test. Features are a core
/// block centred on mu_core (2y - 1) and a spurious block centred on
/// mu_spurious (2c - 1). Minority = c != y.
Dataset gen_spurious_features(std::size_t dim_core, std::size_t dim_spurious, double rho_train,
                              std::size_t n, Split split, std::uint64_t seed,
                              const SpuriousOptions& opts = {},
                              AnnotationLevel annotation = AnnotationLevel::fine_grained);

/// Largest-remainder rounding of n * proportions; ties go to the lower index.
std::vector<std::size_t> largest_remainder_counts(std::span<const double> proportions,
                                                  std::size_t n);

/// minority = true per sample, read from the privileged view.
std::vector<bool> oracle_partition(const Dataset& ds);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace groupmix
