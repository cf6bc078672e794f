#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "groupmix/checkpoint.hpp"
#include "groupmix/error.hpp"
#include "groupmix/harness.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<std::string> methods;
  std::vector<double> alphas;
  std::vector<double> sigmas;
  std::size_t n = 0;
  std::string model;
  std::string data;
};

LoadedConfig resolve_config(const Options& o, bool toy_default) {
  LoadedConfig lc;
  if (!o.config.empty()) {
    lc = load_config(o.config);
  } else {
    require(toy_default, ErrorKind::config, "--config is required");
    lc.config = toy_experiment();
    lc.defaults.push_back("config = built-in toy experiment (default)");
  }
  if (!o.seeds.empty()) lc.config.seeds = o.seeds;
  if (!o.out.empty()) lc.config.output_dir = o.out;
  if (!o.methods.empty()) {
    std::vector<MethodBlock> kept;
    for (const MethodBlock& mb : lc.config.methods)
      for (const std::string& m : o.methods)
        if (mb.name == m || to_string(mb.train.method) == m) {
          kept.push_back(mb);
          break;
        }
    require(!kept.empty(), ErrorKind::config, "--method matches no method block");
    lc.config.methods = std::move(kept);
  }
  return lc;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void print_cells(const std::vector<CellResult>& cells) {
  std::cout << "method,seed,avg_acc,worst_acc\n";
  for (const CellResult& c : cells) {
    if (c.error) {
      std::cout << c.name << "," << c.seed << ",failed: " << *c.error << "\n";
    } else {
      std::cout << c.name << "," << c.seed << "," << fmt(c.row.metrics.average_accuracy) << ","
                << fmt(c.row.metrics.worst_group_accuracy) << "\n";
    }
  }
}

int finish_sweep(const std::vector<CellResult>& cells) {
  print_cells(cells);
  std::size_t failed = 0;
  const CellResult* first = nullptr;
  for (const CellResult& c : cells)
    if (c.error) {
      ++failed;
      if (!first) first = &c;
    }
  if (failed == 0) return 0;
  const std::string& e = *first->error;
  const std::string cat = e.substr(0, e.find(':'));
  std::cerr << "error: " << cat << ": " << failed << " of " << cells.size()
            << " cells failed; first " << first->name << "/" << first->seed << ": "
            << e.substr(e.find(':') + 2) << "\n";
  return 1;
}

int cmd_generate(const Options& o) {
  const LoadedConfig lc = resolve_config(o, true);
  for (std::uint64_t seed : lc.config.seeds) {
    const DatasetBundle b = generate_datasets(lc.config.dataset, seed);
    const fs::path dir = fs::path(lc.config.output_dir) / std::to_string(seed);
    fs::create_directories(dir);
    save_dataset(b.train, dir / "train.txt");
    save_dataset(b.val, dir / "val.txt");
    save_dataset(b.test, dir / "test.txt");
    std::cout << dir.string() << ": train " << b.train.size() << ", val " << b.val.size()
              << ", test " << b.test.size() << "\n";
  }
  return 0;
}

int cmd_train(const Options& o) {
  const LoadedConfig lc = resolve_config(o, false);
  require(lc.config.methods.size() == 1, ErrorKind::config,
          "train runs one method block; select it with --method");
  std::vector<CellResult> cells;
  for (std::uint64_t seed : lc.config.seeds) {
    DatasetBundle data = o.data.empty()
                             ? generate_datasets(lc.config.dataset, seed)
                             : DatasetBundle{load_dataset(fs::path(o.data) / "train.txt"),
                                             load_dataset(fs::path(o.data) / "val.txt"),
                                             load_dataset(fs::path(o.data) / "test.txt")};
    data.train = data.train.with_annotation(AnnotationLevel::fine_grained);
    cells.push_back(run_cell(lc.config, lc.config.methods.front(), seed, data,
                             lc.config.output_dir, lc.defaults));
  }
  print_cells(cells);
  return 0;
}

int cmd_evaluate(const Options& o) {
  require(!o.model.empty() && !o.data.empty(), ErrorKind::config,
          "evaluate needs --model and --data");
  const Mlp model = load_checkpoint(o.model);
  const Dataset ds = load_dataset(o.data);
  const ReportRow rows[] = {{"evaluate", 0, evaluate(model, ds)}};
  const std::string csv = metrics_csv(rows);
  std::cout << csv;
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream os(fs::path(o.out) / "metrics.csv", std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + o.out + "/metrics.csv");
    os << csv;
  }
  return 0;
}

int cmd_sweep(const Options& o, bool toy) {
  Options opts = o;
  if (toy && opts.out.empty() && opts.config.empty()) opts.out = "toy_out";
  const LoadedConfig lc = resolve_config(opts, toy);
  for (const std::string& d : lc.defaults) std::cout << "default " << d << "\n";
  return finish_sweep(run_sweep(lc.config, lc.config.output_dir, lc.defaults));
}

// Random network (widths <= 16), batch (<= 8 rows) and soft targets.
Batch random_case(Rng& rng, Mlp& mlp) {
  std::vector<std::size_t> widths;
  const std::size_t depth = 1 + sample_index(rng, 3);
  widths.push_back(1 + sample_index(rng, 16));
  for (std::size_t i = 1; i < depth; ++i) widths.push_back(1 + sample_index(rng, 16));
  widths.push_back(2 + sample_index(rng, 15));
  mlp = Mlp::make(widths, rng);
  for (std::size_t k = 0; k < mlp.num_layers(); ++k)
    for (double& b : mlp.bias(k)) b = sample_normal(rng, 0.0, 0.1);
  Batch b;
  b.layer_k = sample_index(rng, mlp.num_layers());
  const std::size_t rows = 1 + sample_index(rng, 8);
  const std::size_t in = mlp.layer(b.layer_k).in_dim;
  const std::size_t k = widths.back();
  b.inputs = Matrix(rows, in);
  b.targets = Matrix(rows, k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < in; ++c) b.inputs(r, c) = sample_normal(rng, 0.0, 1.0);
    const std::size_t y = sample_index(rng, k);
    const double a = sample_uniform01(rng);
    b.targets(r, y) += a;
    b.targets(r, sample_index(rng, k)) += 1.0 - a;
    b.weights.push_back(0.1 + sample_uniform01(rng));
  }
  return b;
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seeds.empty() ? 0 : o.seeds.front();
  const std::size_t draws = o.n ? o.n : 100;
  double worst = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    Rng rng = make_rng(seed, "gradcheck", {i});
    Mlp mlp;
    const Batch b = random_case(rng, mlp);
    worst = std::max(worst, gradient_check(mlp, b, 1e-5));
  }
  std::cout << "draws " << draws << " max_relative_error " << worst << "\n";
  require(worst < 1e-5, ErrorKind::numeric,
          "max relative gradient error " + std::to_string(worst) + " exceeds 1e-5");
  return 0;
}

int cmd_theorem_check(const Options& o) {
  const std::vector<double> alphas =
      o.alphas.empty() ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0} : o.alphas;
  const std::vector<double> sigmas = o.sigmas.empty() ? std::vector<double>{1.0} : o.sigmas;
  const std::size_t n = o.n ? o.n : 100000;
  const std::uint64_t seed = o.seeds.empty() ? 0 : o.seeds.front();
  const double g[] = {0.0, 1.0};
  const double gbar[] = {1.0, 1.0};
  std::cout << "alpha,sigma,n,predicted_var,empirical_var,max_abs_z,pooled_var_z\n";
  double worst = 0.0;
  for (double s : sigmas)
    for (double a : alphas) {
      const TheoremCheckResult r = theorem_check(g, gbar, s, a, n, seed);
      worst = std::max(worst, r.max_abs_z());
      std::cout << fmt(a, 3) << "," << fmt(s, 3) << "," << n << "," << fmt(r.predicted_var, 6)
                << "," << fmt(r.empirical_var_pooled, 6) << "," << fmt(r.max_abs_z(), 3) << ","
                << fmt(r.pooled_var_z, 3) << "\n";
    }
  require(worst < 5.0, ErrorKind::numeric, "z-score " + std::to_string(worst) + " exceeds 5");
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Group-robust training toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool config, bool out) {
    if (config) sub->add_option("--config", o.config, "experiment JSON file");
    sub->add_option("--seed", o.seeds, "seed (repeatable)")->take_all();
    if (out) sub->add_option("--out", o.out, "output directory");
  };
  CLI::App* generate = app.add_subcommand("generate", "write train/val/test datasets");
  common(generate, true, true);
  CLI::App* trn = app.add_subcommand("train", "train one method block");
  common(trn, true, true);
  trn->add_option("--method", o.methods, "method block name or method");
  trn->add_option("--data", o.data, "directory written by generate");
  CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  eval->add_option("--model", o.model, "checkpoint path");
  eval->add_option("--data", o.data, "dataset file");
  eval->add_option("--out", o.out, "directory for metrics.csv");
  CLI::App* toy = app.add_subcommand("reproduce-toy", "run every method on the Gaussian toy");
  common(toy, true, true);
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  grad->add_option("--seed", o.seeds, "seed");
  grad->add_option("--n", o.n, "number of random draws");
  CLI::App* thm = app.add_subcommand("theorem-check", "moments of class-conditional mixes");
  thm->add_option("--alpha", o.alphas, "mixing rate (repeatable)")->take_all();
  thm->add_option("--sigma", o.sigmas, "group standard deviation (repeatable)")->take_all();
  thm->add_option("--n", o.n, "pairs per check (>= 10000)");
  thm->add_option("--seed", o.seeds, "seed");
  CLI::App* sweep = app.add_subcommand("sweep", "method x seed grid");
  common(sweep, true, true);
  sweep->add_option("--method", o.methods, "restrict to these method blocks")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*generate) return cmd_generate(o);
    if (*trn) return cmd_train(o);
    if (*eval) return cmd_evaluate(o);
    if (*toy) return cmd_sweep(o, true);
    if (*grad) return cmd_gradcheck(o);
    if (*thm) return cmd_theorem_check(o);
    if (*sweep) return cmd_sweep(o, false);
  } catch (const Error& e) {
    std::cerr << "error: " << category(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace groupmix
