#include "groupmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "groupmix/error.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {
namespace {

constexpr const char* kDatasetMagic = "groupmix-dataset";

void check_simplex(std::span<const double> p, const char* what) {
  double s = 0.0;
  for (double v : p) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::config,
            std::string(what) + " proportions must lie in [0, 1]");
    s += v;
  }
  require(std::abs(s - 1.0) <= 1e-9, ErrorKind::config,
          std::string(what) + " proportions sum to " + std::to_string(s) + ", expected 1");
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string to_string(GroupId g) {
  return "g_" + std::to_string(g.c) + "_" + std::to_string(g.y);
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::majority: return "majority";
    case Partition::minority: return "minority";
    case Partition::unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(AnnotationLevel a) {
  switch (a) {
    case AnnotationLevel::fine_grained: return "fine_grained";
    case AnnotationLevel::coarse: return "coarse";
    case AnnotationLevel::validation_only: return "validation_only";
    case AnnotationLevel::none: return "none";
  }
  return "none";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Partition parse_partition(std::string_view s) {
  if (s == "majority") return Partition::majority;
  if (s == "minority") return Partition::minority;
  if (s == "unknown") return Partition::unknown;
  fail(ErrorKind::data, "unknown partition '" + std::string(s) + "'");
}

AnnotationLevel parse_annotation(std::string_view s) {
  if (s == "fine_grained") return AnnotationLevel::fine_grained;
  if (s == "coarse") return AnnotationLevel::coarse;
  if (s == "validation_only") return AnnotationLevel::validation_only;
  if (s == "none") return AnnotationLevel::none;
  fail(ErrorKind::config, "unknown annotation level '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  fail(ErrorKind::config, "unknown split '" + std::string(s) + "'");
}

Dataset::Dataset(std::vector<Sample> samples, std::size_t num_classes,
                 std::vector<GroupId> groups, AnnotationLevel annotation, Split split,
                 bool has_truth)
    : samples_(std::move(samples)),
      num_classes_(num_classes),
      groups_(std::move(groups)),
      annotation_(annotation),
      split_(split),
      has_truth_(has_truth) {
  require(!samples_.empty(), ErrorKind::data, "dataset is empty");
  require(num_classes_ >= 1, ErrorKind::data, "dataset needs at least one class");
  std::sort(groups_.begin(), groups_.end());
  groups_.erase(std::unique(groups_.begin(), groups_.end()), groups_.end());
  dim_ = samples_.front().features.size();
  require(dim_ >= 1, ErrorKind::data, "samples have no features");
  std::vector<bool> seen(num_classes_, false);
  for (const Sample& s : samples_) {
    require(s.features.size() == dim_, ErrorKind::data, "inconsistent feature widths");
    require(s.y >= 0 && static_cast<std::size_t>(s.y) < num_classes_, ErrorKind::data,
            "label " + std::to_string(s.y) + " out of range");
    seen[static_cast<std::size_t>(s.y)] = true;
    if (has_truth_) {
      require(s.group == GroupId{s.c, s.y}, ErrorKind::data, "sample group differs from (c, y)");
      require(std::binary_search(groups_.begin(), groups_.end(), s.group), ErrorKind::data,
              "sample group " + to_string(s.group) + " not declared");
    }
  }
  for (std::size_t k = 0; k < num_classes_; ++k)
    require(seen[k], ErrorKind::data,
            "class " + std::to_string(k) + " missing from " + std::string(to_string(split_)) +
                " split");
}

std::span<const double> Dataset::features(std::size_t i) const { return samples_.at(i).features; }

int Dataset::label(std::size_t i) const { return samples_.at(i).y; }

Matrix Dataset::feature_matrix() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return feature_matrix(idx);
}

Matrix Dataset::feature_matrix(std::span<const std::size_t> indices) const {
  Matrix m(indices.size(), dim_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& f = samples_.at(indices[r]).features;
    std::copy(f.begin(), f.end(), m.row(r).begin());
  }
  return m;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = samples_[i].y;
  return out;
}

std::vector<int> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) out[r] = samples_.at(indices[r]).y;
  return out;
}

bool Dataset::exposes_groups() const noexcept {
  if (!has_truth_) return false;
  switch (annotation_) {
    case AnnotationLevel::fine_grained:
      return true;
    case AnnotationLevel::coarse:
    case AnnotationLevel::validation_only:
      return split_ == Split::validation;
    case AnnotationLevel::none:
      return false;
  }
  return false;
}

bool Dataset::exposes_partition() const noexcept {
  if (exposes_groups()) return true;
  return has_truth_ && annotation_ == AnnotationLevel::coarse && split_ == Split::train;
}

GroupId Dataset::group(std::size_t i) const {
  ++audit_.group_reads;
  if (!exposes_groups()) {
    ++audit_.forbidden_reads;
    fail(ErrorKind::annotation, "group labels are withheld on this " +
                                    std::string(to_string(split_)) + " split (annotation " +
                                    std::string(to_string(annotation_)) + ")");
  }
  return samples_.at(i).group;
}

int Dataset::confounder(std::size_t i) const { return group(i).c; }

const std::vector<GroupId>& Dataset::groups() const {
  ++audit_.group_reads;
  if (!exposes_groups()) {
    ++audit_.forbidden_reads;
    fail(ErrorKind::annotation, "group set is withheld on this split");
  }
  return groups_;
}

Partition Dataset::partition(std::size_t i) const {
  ++audit_.partition_reads;
  if (!exposes_partition()) {
    ++audit_.forbidden_reads;
    return Partition::unknown;
  }
  return samples_.at(i).partition;
}

Dataset Dataset::with_annotation(AnnotationLevel level) const {
  Dataset copy = *this;
  copy.annotation_ = level;
  copy.audit_ = {};
  return copy;
}

GroupTruthView Dataset::privileged() const { return GroupTruthView(*this); }

GroupTruthView::GroupTruthView(const Dataset& ds) : ds_(&ds) {
  ++ds.audit_.privileged_views;
  require(ds.has_truth_, ErrorKind::unsupported, "dataset carries no group truth");
}

std::vector<std::size_t> largest_remainder_counts(std::span<const double> proportions,
                                                  std::size_t n) {
  std::vector<std::size_t> counts(proportions.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < proportions.size(); ++g) {
    const double exact = proportions[g] * static_cast<double>(n);
    // Guard against 0.25 * 400 landing at 99.999999.
    const double fl = std::floor(exact + 1e-9);
    counts[g] = static_cast<std::size_t>(fl);
    assigned += counts[g];
    rema.emplace_back(std::max(0.0, exact - fl), g);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n && r < rema.size(); ++r, ++assigned)
    ++counts[rema[r].second];
  return counts;
}

std::vector<GroupSpec> toy_group_specs(double sigma, double minority_share) {
  const double maj = (1.0 - minority_share) / 2.0;
  const double mnr = minority_share / 2.0;
  return {
      {{0, 0}, maj, 0.25, {0.0, 0.0}, sigma},
      {{0, 1}, mnr, 0.25, {0.0, 1.0}, sigma},
      {{1, 0}, mnr, 0.25, {1.0, 0.0}, sigma},
      {{1, 1}, maj, 0.25, {1.0, 1.0}, sigma},
  };
}

Dataset gen_gaussian_groups(std::span<const GroupSpec> specs, std::size_t n, Split split,
                            std::uint64_t seed, AnnotationLevel annotation) {
  require(!specs.empty(), ErrorKind::config, "no group specs");
  require(n >= specs.size(), ErrorKind::config, "fewer samples than groups");
  std::vector<double> train_p, test_p;
  std::set<int> cs, ys;
  std::vector<GroupId> groups;
  const std::size_t dim = specs.front().mean.size();
  for (const GroupSpec& s : specs) {
    require(s.sigma > 0.0, ErrorKind::config, "sigma must be positive for " + to_string(s.group));
    require(s.mean.size() == dim && dim >= 1, ErrorKind::config, "group means differ in width");
    require(s.group.c >= 0 && s.group.y >= 0, ErrorKind::config, "negative group index");
    train_p.push_back(s.train_proportion);
    test_p.push_back(s.test_proportion);
    cs.insert(s.group.c);
    ys.insert(s.group.y);
    groups.push_back(s.group);
  }
  check_simplex(train_p, "train");
  check_simplex(test_p, "test");
  {
    std::set<GroupId> uniq(groups.begin(), groups.end());
    require(uniq.size() == groups.size(), ErrorKind::config, "duplicate group spec");
    require(uniq.size() == cs.size() * ys.size(), ErrorKind::config,
            "group specs do not form a (c, y) cross product");
  }
  const std::size_t num_classes = static_cast<std::size_t>(*ys.rbegin()) + 1;
  require(ys.size() == num_classes, ErrorKind::config, "class labels must be 0..K-1");

  const auto& props = split == Split::test ? test_p : train_p;
  const auto counts = largest_remainder_counts(props, n);
  if (split == Split::test)
    for (std::size_t g = 0; g < specs.size(); ++g)
      require(counts[g] > 0, ErrorKind::config,
              "test split must contain every group; " + to_string(specs[g].group) +
                  " rounds to zero samples");

  const double avg = 1.0 / static_cast<double>(specs.size());
  Rng rng = make_rng(seed, "gaussian-groups", {static_cast<std::uint64_t>(split)});
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t g = 0; g < specs.size(); ++g) {
    const GroupSpec& s = specs[g];
    const bool minority = s.train_proportion < avg - 1e-12;
    for (std::size_t i = 0; i < counts[g]; ++i) {
      Sample smp;
      smp.features.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) smp.features[d] = sample_normal(rng, s.mean[d], s.sigma);
      smp.y = s.group.y;
      smp.c = s.group.c;
      smp.group = s.group;
      smp.partition = minority ? Partition::minority : Partition::majority;
      samples.push_back(std::move(smp));
    }
  }
  std::shuffle(samples.begin(), samples.end(), rng);
  return Dataset(std::move(samples), num_classes, std::move(groups), annotation, split);
}

Dataset gen_spurious_features(std::size_t dim_core, std::size_t dim_spurious, double rho_train,
                              std::size_t n, Split split, std::uint64_t seed,
                              const SpuriousOptions& opts, AnnotationLevel annotation) {
  require(dim_core >= 1 && dim_spurious >= 1, ErrorKind::config, "block widths must be >= 1");
  require(rho_train >= 0.5 && rho_train <= 1.0, ErrorKind::config,
          "rho_train must lie in [0.5, 1], got " + std::to_string(rho_train));
  require(opts.sigma_core > 0.0 && opts.sigma_spurious > 0.0, ErrorKind::config,
          "noise scales must be positive");
  const double rho = split == Split::test ? 0.5 : rho_train;
  const std::vector<GroupId> groups = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const std::vector<double> props = {rho / 2, (1 - rho) / 2, (1 - rho) / 2, rho / 2};
  const auto counts = largest_remainder_counts(props, n);
  if (split == Split::test)
    for (std::size_t g = 0; g < groups.size(); ++g)
      require(counts[g] > 0, ErrorKind::config,
              "test split must contain every group; " + to_string(groups[g]) +
                  " rounds to zero samples");

  Rng rng = make_rng(seed, "spurious-features", {static_cast<std::uint64_t>(split)});
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const GroupId gid = groups[g];
    for (std::size_t i = 0; i < counts[g]; ++i) {
      Sample s;
      s.features.reserve(dim_core + dim_spurious);
      for (std::size_t d = 0; d < dim_core; ++d)
        s.features.push_back(sample_normal(rng, opts.mu_core * (2 * gid.y - 1), opts.sigma_core));
      for (std::size_t d = 0; d < dim_spurious; ++d)
        s.features.push_back(
            sample_normal(rng, opts.mu_spurious * (2 * gid.c - 1), opts.sigma_spurious));
      s.y = gid.y;
      s.c = gid.c;
      s.group = gid;
      s.partition = gid.c != gid.y ? Partition::minority : Partition::majority;
      samples.push_back(std::move(s));
    }
  }
  std::shuffle(samples.begin(), samples.end(), rng);
  return Dataset(std::move(samples), 2, groups, annotation, split);
}

std::vector<bool> oracle_partition(const Dataset& ds) {
  require(ds.has_truth(), ErrorKind::unsupported, "oracle partition needs group truth");
  const GroupTruthView truth = ds.privileged();
  std::vector<bool> mask(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) mask[i] = truth.is_minority(i);
  return mask;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << kDatasetMagic << " dims=" << ds.dim() << " K=" << ds.num_classes()
     << " annotation=" << to_string(ds.annotation()) << " split=" << to_string(ds.split())
     << '\n';
  std::optional<GroupTruthView> truth;
  if (ds.has_truth()) truth.emplace(ds.privileged());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double f : ds.features(i)) os << fmt9(f) << ',';
    os << ds.label(i) << ',';
    if (truth)
      os << truth->confounder(i) << ',' << to_string(truth->partition(i));
    else
      os << "-1," << to_string(Partition::unknown);
    os << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), ErrorKind::io,
          "missing header in " + path.string());
  std::istringstream hs(line);
  std::string magic;
  hs >> magic;
  require(magic == kDatasetMagic, ErrorKind::data, "not a dataset file: " + path.string());
  std::map<std::string, std::string> header;
  for (std::string kv; hs >> kv;) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::data, "malformed header field '" + kv + "'");
    header[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const char* key : {"dims", "K", "annotation", "split"})
    require(header.count(key) == 1, ErrorKind::data,
            std::string("header missing '") + key + "' in " + path.string());
  std::size_t dims = 0, k_classes = 0;
  try {
    dims = std::stoul(header["dims"]);
    k_classes = std::stoul(header["K"]);
  } catch (const std::logic_error&) {
    fail(ErrorKind::data, "bad dims or K in header of " + path.string());
  }
  const AnnotationLevel annotation = parse_annotation(header["annotation"]);
  const Split split = parse_split(header["split"]);

  std::vector<Sample> samples;
  std::set<int> cs;
  bool has_truth = true;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    require(fields.size() == dims + 3, ErrorKind::data,
            path.string() + ":" + std::to_string(line_no) + ": expected " +
                std::to_string(dims + 3) + " fields");
    Sample s;
    try {
      for (std::size_t d = 0; d < dims; ++d) s.features.push_back(std::stod(fields[d]));
      s.y = std::stoi(fields[dims]);
      s.c = std::stoi(fields[dims + 1]);
    } catch (const std::logic_error&) {
      fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
    s.partition = parse_partition(fields[dims + 2]);
    s.group = {s.c, s.y};
    if (s.c < 0) has_truth = false;
    cs.insert(s.c);
    samples.push_back(std::move(s));
  }
  std::vector<GroupId> groups;
  if (has_truth)
    for (int c : cs)
      for (std::size_t y = 0; y < k_classes; ++y) groups.push_back({c, static_cast<int>(y)});
  return Dataset(std::move(samples), k_classes, std::move(groups), annotation, split, has_truth);
}

}  // namespace groupmix
