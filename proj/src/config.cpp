#include "groupmix/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "groupmix/error.hpp"
#include "groupmix/rng.hpp"
#include "json.hpp"

namespace groupmix {
namespace {

using json = nlohmann::json;

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be rejected, and logging every default it fills in.
class Block {
 public:
  Block(const json& j, std::string path, std::vector<std::string>& defaults)
      : j_(j), path_(std::move(path)), defaults_(defaults) {
    require(j_.is_object(), ErrorKind::config, path_ + ": expected an object");
  }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      defaults_.push_back(where(key) + " = " + json(fallback).dump() + " (default)");
      return fallback;
    }
    return as<T>(key);
  }

  template <typename T>
  T required(const std::string& key) {
    seen_.insert(key);
    require(j_.contains(key), ErrorKind::config, where(key) + ": required key missing");
    return as<T>(key);
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      require(seen_.count(k) == 1, ErrorKind::config, where(k) + ": unknown key");
  }

 private:
  template <typename T>
  T as(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::config, where(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& defaults_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::config) throw;
    const std::string what = e.what();
    if (what.rfind(path, 0) == 0) throw;
    fail(ErrorKind::config, path + ": " + what);
  }
}

AlphaKind parse_alpha_kind(const std::string& s) {
  for (AlphaKind k : {AlphaKind::uniform01, AlphaKind::beta, AlphaKind::coupled, AlphaKind::fixed})
    if (to_string(k) == s) return k;
  fail(ErrorKind::config, "unknown alpha distribution '" + s + "'");
}

LayerKind parse_layer_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::input, LayerKind::hidden, LayerKind::output,
                      LayerKind::random_per_batch})
    if (to_string(k) == s) return k;
  fail(ErrorKind::config, "unknown mixing layer '" + s + "'");
}

Pairing parse_pairing(const std::string& s) {
  for (Pairing p : {Pairing::cross_partition, Pairing::random_group, Pairing::unconditional})
    if (to_string(p) == s) return p;
  fail(ErrorKind::config, "unknown pairing '" + s + "'");
}

AlphaRole parse_alpha_role(const std::string& s) {
  if (s == "minority") return AlphaRole::minority;
  if (s == "majority") return AlphaRole::majority;
  fail(ErrorKind::config, "unknown alpha_on '" + s + "'");
}

Fallback parse_fallback(const std::string& s) {
  if (s == "pass_through") return Fallback::pass_through;
  if (s == "drop") return Fallback::drop;
  fail(ErrorKind::config, "unknown fallback '" + s + "'");
}

Generator parse_generator(const std::string& s) {
  for (Generator g : {Generator::gaussian_toy, Generator::gaussian, Generator::spurious})
    if (to_string(g) == s) return g;
  fail(ErrorKind::config, "unknown generator '" + s + "'");
}

MixPolicy parse_mix(const json& j, const std::string& path, const MixPolicy& d,
                    std::vector<std::string>& defaults) {
  Block b(j, path, defaults);
  MixPolicy m = d;
  with_path(b.where("alpha"), [&] {
    m.alpha.kind = parse_alpha_kind(b.get<std::string>("alpha", std::string(to_string(d.alpha.kind))));
    return 0;
  });
  m.alpha.a = b.get<double>("beta_a", d.alpha.a);
  m.alpha.b = b.get<double>("beta_b", d.alpha.b);
  m.alpha.value = b.get<double>("alpha_value", d.alpha.value);
  with_path(b.where("alpha_on"), [&] {
    m.alpha_on = parse_alpha_role(b.get<std::string>("alpha_on", std::string(to_string(d.alpha_on))));
    return 0;
  });
  with_path(b.where("layer"), [&] {
    m.layer.kind = parse_layer_kind(b.get<std::string>("layer", std::string(to_string(d.layer.kind))));
    return 0;
  });
  m.layer.hidden_k = b.get<std::size_t>("hidden_layer", d.layer.hidden_k);
  with_path(b.where("pairing"), [&] {
    m.pairing = parse_pairing(b.get<std::string>("pairing", std::string(to_string(d.pairing))));
    return 0;
  });
  with_path(b.where("fallback"), [&] {
    m.fallback = parse_fallback(b.get<std::string>("fallback", std::string(to_string(d.fallback))));
    return 0;
  });
  b.finish();
  return m;
}

IdentificationConfig parse_identification(const json& j, const std::string& path,
                                          const IdentificationConfig& d,
                                          std::vector<std::string>& defaults) {
  Block b(j, path, defaults);
  IdentificationConfig c = d;
  c.epochs = b.get<std::size_t>("epochs", d.epochs);
  c.batch_size = b.get<std::size_t>("batch_size", d.batch_size);
  c.lr = b.get<double>("lr", d.lr);
  c.weight_decay = b.get<double>("weight_decay", d.weight_decay);
  c.hidden = b.get<std::vector<std::size_t>>("hidden", d.hidden);
  with_path(b.where("selection"), [&] {
    c.selection = parse_selection(b.get<std::string>("selection", std::string(to_string(d.selection))));
    return 0;
  });
  c.fixed_epoch = b.get<std::size_t>("fixed_epoch", d.fixed_epoch);
  c.grid = b.get<std::vector<std::size_t>>("grid", d.grid);
  b.finish();
  return c;
}

MethodBlock parse_method_block(const json& j, const std::string& path,
                               std::vector<std::string>& defaults) {
  Block b(j, path, defaults);
  const Method method =
      with_path(b.where("method"), [&] { return parse_method(b.required<std::string>("method")); });
  const TrainConfig d = default_config(method);
  MethodBlock mb;
  TrainConfig& c = mb.train;
  c = d;
  mb.name = b.get<std::string>("name", std::string(to_string(method)));
  c.annotation = with_path(b.where("annotation"), [&] {
    return parse_annotation(b.get<std::string>("annotation", std::string(to_string(d.annotation))));
  });
  c.epochs = b.get<std::size_t>("epochs", d.epochs);
  c.batch_size = b.get<std::size_t>("batch_size", d.batch_size);
  c.lr = b.get<double>("lr", d.lr);
  c.weight_decay = b.get<double>("weight_decay", d.weight_decay);
  c.lambda_up = b.get<double>("lambda_up", d.lambda_up);
  c.eta_q = b.get<double>("eta_q", d.eta_q);
  c.hidden = b.get<std::vector<std::size_t>>("hidden", d.hidden);
  c.selection = with_path(b.where("selection"), [&] {
    return parse_selection_criterion(b.get<std::string>("selection", std::string(to_string(d.selection))));
  });
  c.buffer = with_path(b.where("buffer"), [&] {
    return parse_buffer_mode(b.get<std::string>("buffer", std::string(to_string(d.buffer))));
  });
  if (const json* mj = b.child("mix"))
    c.mix = parse_mix(*mj, b.where("mix"), d.mix, defaults);
  else
    defaults.push_back(b.where("mix") + " = " + describe(d.mix) + " (default)");
  if (const json* ij = b.child("identification"))
    c.identification = parse_identification(*ij, b.where("identification"), d.identification, defaults);
  else
    defaults.push_back(b.where("identification") + " = method defaults (default)");
  b.finish();
  with_path(path, [&] {
    c.validate();
    return 0;
  });
  return mb;
}

DatasetConfig parse_dataset(const json& j, std::vector<std::string>& defaults) {
  Block b(j, "dataset", defaults);
  DatasetConfig d;
  DatasetConfig c;
  c.generator = with_path("dataset.generator", [&] {
    return parse_generator(b.required<std::string>("generator"));
  });
  c.n_train = b.get<std::size_t>("n_train", d.n_train);
  c.n_val = b.get<std::size_t>("n_val", d.n_val);
  c.n_test = b.get<std::size_t>("n_test", d.n_test);
  if (c.generator == Generator::gaussian_toy) {
    c.sigma = b.get<double>("sigma", d.sigma);
    c.minority_share = b.get<double>("minority_share", d.minority_share);
  } else if (c.generator == Generator::gaussian) {
    const json* groups = b.child("groups");
    require(groups != nullptr && groups->is_array() && !groups->empty(), ErrorKind::config,
            "dataset.groups: required non-empty array for the gaussian generator");
    for (std::size_t i = 0; i < groups->size(); ++i) {
      Block g((*groups)[i], "dataset.groups[" + std::to_string(i) + "]", defaults);
      GroupSpec s;
      s.group.c = g.required<int>("c");
      s.group.y = g.required<int>("y");
      s.train_proportion = g.required<double>("train");
      s.test_proportion = g.required<double>("test");
      s.mean = g.required<std::vector<double>>("mean");
      s.sigma = g.get<double>("sigma", d.sigma);
      g.finish();
      c.groups.push_back(std::move(s));
    }
  } else {
    c.dim_core = b.get<std::size_t>("dim_core", d.dim_core);
    c.dim_spurious = b.get<std::size_t>("dim_spurious", d.dim_spurious);
    c.rho_train = b.get<double>("rho_train", d.rho_train);
    c.spurious.mu_core = b.get<double>("mu_core", d.spurious.mu_core);
    c.spurious.sigma_core = b.get<double>("sigma_core", d.spurious.sigma_core);
    c.spurious.mu_spurious = b.get<double>("mu_spurious", d.spurious.mu_spurious);
    c.spurious.sigma_spurious = b.get<double>("sigma_spurious", d.spurious.sigma_spurious);
  }
  b.finish();
  require(c.n_train >= 1 && c.n_test >= 1, ErrorKind::config,
          "dataset.n_train and dataset.n_test must be >= 1");
  return c;
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json mix_json(const MixPolicy& m) {
  return {{"alpha", to_string(m.alpha.kind)}, {"beta_a", m.alpha.a},
          {"beta_b", m.alpha.b},              {"alpha_value", m.alpha.value},
          {"alpha_on", to_string(m.alpha_on)}, {"layer", to_string(m.layer.kind)},
          {"hidden_layer", m.layer.hidden_k}, {"pairing", to_string(m.pairing)},
          {"fallback", to_string(m.fallback)}};
}

json method_json(const MethodBlock& mb) {
  const TrainConfig& c = mb.train;
  const IdentificationConfig& id = c.identification;
  return {{"name", mb.name},
          {"method", to_string(c.method)},
          {"annotation", to_string(c.annotation)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"lambda_up", c.lambda_up},
          {"eta_q", c.eta_q},
          {"hidden", c.hidden},
          {"selection", to_string(c.selection)},
          {"buffer", to_string(c.buffer)},
          {"mix", mix_json(c.mix)},
          {"identification",
           {{"epochs", id.epochs},
            {"batch_size", id.batch_size},
            {"lr", id.lr},
            {"weight_decay", id.weight_decay},
            {"hidden", id.hidden},
            {"selection", to_string(id.selection)},
            {"fixed_epoch", id.fixed_epoch},
            {"grid", id.grid}}}};
}

}  // namespace

std::string_view to_string(Generator g) {
  switch (g) {
    case Generator::gaussian_toy: return "gaussian_toy";
    case Generator::gaussian: return "gaussian";
    case Generator::spurious: return "spurious";
  }
  return "gaussian_toy";
}

LoadedConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte);
    fail(ErrorKind::config, "parse error at line " + std::to_string(line) + ", column " +
                                std::to_string(col) + ": " + e.what());
  }
  LoadedConfig out;
  Block top(j, "", out.defaults);
  const json* ds = top.child("dataset");
  require(ds != nullptr, ErrorKind::config, "dataset: required key missing");
  out.config.dataset = parse_dataset(*ds, out.defaults);
  const json* methods = top.child("methods");
  require(methods != nullptr && methods->is_array() && !methods->empty(), ErrorKind::config,
          "methods: required non-empty array");
  for (std::size_t i = 0; i < methods->size(); ++i)
    out.config.methods.push_back(
        parse_method_block((*methods)[i], "methods[" + std::to_string(i) + "]", out.defaults));
  out.config.seeds = top.get<std::vector<std::uint64_t>>("seeds", {0});
  require(!out.config.seeds.empty(), ErrorKind::config, "seeds: must list at least one seed");
  out.config.output_dir = top.get<std::string>("output_dir", "out");
  top.finish();
  return out;
}

LoadedConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_method(const MethodBlock& block) { return method_json(block).dump(2) + "\n"; }

std::string serialize_config(const ExperimentConfig& cfg) {
  const DatasetConfig& d = cfg.dataset;
  json ds = {{"generator", to_string(d.generator)},
             {"n_train", d.n_train},
             {"n_val", d.n_val},
             {"n_test", d.n_test}};
  if (d.generator == Generator::gaussian_toy) {
    ds["sigma"] = d.sigma;
    ds["minority_share"] = d.minority_share;
  } else if (d.generator == Generator::gaussian) {
    json groups = json::array();
    for (const GroupSpec& s : d.groups)
      groups.push_back({{"c", s.group.c},
                        {"y", s.group.y},
                        {"train", s.train_proportion},
                        {"test", s.test_proportion},
                        {"mean", s.mean},
                        {"sigma", s.sigma}});
    ds["groups"] = groups;
  } else {
    ds["dim_core"] = d.dim_core;
    ds["dim_spurious"] = d.dim_spurious;
    ds["rho_train"] = d.rho_train;
    ds["mu_core"] = d.spurious.mu_core;
    ds["sigma_core"] = d.spurious.sigma_core;
    ds["mu_spurious"] = d.spurious.mu_spurious;
    ds["sigma_spurious"] = d.spurious.sigma_spurious;
  }
  json methods = json::array();
  for (const MethodBlock& mb : cfg.methods) methods.push_back(method_json(mb));
  json top = {{"dataset", ds},
              {"methods", methods},
              {"seeds", cfg.seeds},
              {"output_dir", cfg.output_dir}};
  return top.dump(2) + "\n";
}

DatasetBundle generate_datasets(const DatasetConfig& cfg, std::uint64_t seed) {
  const std::uint64_t s_train = derive_seed(seed, "data", {0});
  const std::uint64_t s_val = derive_seed(seed, "data", {1});
  const std::uint64_t s_test = derive_seed(seed, "data", {2});
  const std::size_t n_val = cfg.validation_size();
  switch (cfg.generator) {
    case Generator::gaussian_toy:
    case Generator::gaussian: {
      const std::vector<GroupSpec> specs = cfg.generator == Generator::gaussian_toy
                                               ? toy_group_specs(cfg.sigma, cfg.minority_share)
                                               : cfg.groups;
      return {gen_gaussian_groups(specs, cfg.n_train, Split::train, s_train),
              gen_gaussian_groups(specs, n_val, Split::validation, s_val),
              gen_gaussian_groups(specs, cfg.n_test, Split::test, s_test)};
    }
    case Generator::spurious:
      return {gen_spurious_features(cfg.dim_core, cfg.dim_spurious, cfg.rho_train, cfg.n_train,
                                    Split::train, s_train, cfg.spurious),
              gen_spurious_features(cfg.dim_core, cfg.dim_spurious, cfg.rho_train, n_val,
                                    Split::validation, s_val, cfg.spurious),
              gen_spurious_features(cfg.dim_core, cfg.dim_spurious, cfg.rho_train, cfg.n_test,
                                    Split::test, s_test, cfg.spurious)};
  }
  fail(ErrorKind::config, "unknown generator");
}

ExperimentConfig toy_experiment() {
  ExperimentConfig e;
  e.dataset.generator = Generator::gaussian_toy;
  e.dataset.n_train = 2000;
  e.dataset.n_test = 2000;
  e.seeds = {0, 1, 2};
  e.output_dir = "toy_out";
  auto add = [&](Method m, AnnotationLevel a) {
    MethodBlock mb;
    mb.name = std::string(to_string(m));
    mb.train = default_config(m);
    mb.train.annotation = a;
    e.methods.push_back(mb);
  };
  add(Method::erm, AnnotationLevel::validation_only);
  add(Method::mixup, AnnotationLevel::validation_only);
  add(Method::cmixup, AnnotationLevel::fine_grained);
  add(Method::jtt, AnnotationLevel::coarse);
  add(Method::jm1, AnnotationLevel::coarse);
  add(Method::groupdro, AnnotationLevel::fine_grained);
  add(Method::groupjm1, AnnotationLevel::fine_grained);
  return e;
}

}  // namespace groupmix
