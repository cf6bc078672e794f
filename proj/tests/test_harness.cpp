#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "groupmix/config.hpp"
#include "groupmix/error.hpp"
#include "groupmix/harness.hpp"
#include "oracles.hpp"

using namespace groupmix;
namespace fs = std::filesystem;

namespace {

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    return e.what();
  }
  FAIL("expected an error");
  return {};
}

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

bool has_line(const std::vector<std::string>& v, const std::string& line) {
  return std::find(v.begin(), v.end(), line) != v.end();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("groupmix_harness_" + name);
  fs::remove_all(p);
  return p;
}

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "groupmix");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  CliRun r;
  r.code = cli_main(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// One line, "error: <category>: ...".
void check_error_line(const CliRun& r, const std::string& category) {
  CAPTURE(r.err);
  CHECK(r.code != 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK(r.err.rfind("error: " + category + ": ", 0) == 0);
}

// Random valid experiment for the round-trip property.
ExperimentConfig random_config(oracle::Gen& gen) {
  ExperimentConfig e;
  const auto pick = [&](auto... xs) {
    const std::vector v = {xs...};
    return v[gen.index(0, v.size() - 1)];
  };
  e.dataset.generator = pick(Generator::gaussian_toy, Generator::gaussian, Generator::spurious);
  e.dataset.n_train = gen.index(10, 5000);
  e.dataset.n_val = gen.index(0, 500);
  e.dataset.n_test = gen.index(10, 5000);
  if (e.dataset.generator == Generator::gaussian_toy) {
    e.dataset.sigma = gen.uniform(0.01, 2.0);
    e.dataset.minority_share = gen.uniform(0.0, 0.5);
  } else if (e.dataset.generator == Generator::gaussian) {
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 2; ++y)
        e.dataset.groups.push_back(
            {{c, y}, 0.25, 0.25, {gen.normal(), gen.normal()}, gen.uniform(0.1, 1.0)});
  } else {
    e.dataset.dim_core = gen.index(1, 5);
    e.dataset.dim_spurious = gen.index(1, 5);
    e.dataset.rho_train = gen.uniform(0.5, 1.0);
    e.dataset.spurious = {gen.uniform(0.1, 2), gen.uniform(0.1, 2), gen.uniform(0.1, 2),
                          gen.uniform(0.1, 2)};
  }
  const std::size_t n_methods = gen.index(1, 4);
  for (std::size_t m = 0; m < n_methods; ++m) {
    const Method method = pick(Method::erm, Method::mixup, Method::cmixup, Method::jtt,
                               Method::jm1, Method::groupdro, Method::groupjm1);
    MethodBlock mb;
    mb.name = std::string(to_string(method)) + "_" + std::to_string(m);
    TrainConfig& c = mb.train;
    c = default_config(method);
    if (method == Method::jm1)
      c.annotation = pick(AnnotationLevel::fine_grained, AnnotationLevel::coarse,
                          AnnotationLevel::validation_only, AnnotationLevel::none);
    if (method == Method::jtt)
      c.annotation = pick(AnnotationLevel::coarse, AnnotationLevel::validation_only);
    if (method == Method::erm || method == Method::mixup)
      c.annotation = pick(AnnotationLevel::fine_grained, AnnotationLevel::none);
    c.epochs = gen.index(1, 100);
    c.batch_size = gen.index(1, 128);
    c.lr = gen.uniform(0.0, 0.5);
    c.weight_decay = gen.uniform(0.0, 0.01);
    c.lambda_up = gen.uniform(1.0, 100.0);
    c.eta_q = gen.uniform(0.0, 1.0);
    c.hidden.assign(gen.index(1, 3), 0);
    for (auto& h : c.hidden) h = gen.index(1, 64);
    c.selection = pick(Selection::automatic, Selection::average, Selection::worst);
    c.mix.alpha = pick(AlphaDist::uniform(), AlphaDist::coupled(),
                       AlphaDist::beta(gen.uniform(0.5, 5), gen.uniform(0.5, 5)),
                       AlphaDist::point(gen.uniform(0.0, 1.0)));
    c.mix.alpha_on = pick(AlphaRole::minority, AlphaRole::majority);
    c.mix.layer = {pick(LayerKind::input, LayerKind::hidden, LayerKind::output,
                        LayerKind::random_per_batch),
                   gen.index(1, c.hidden.size())};
    c.mix.fallback = pick(Fallback::pass_through, Fallback::drop);
    c.identification.epochs = gen.index(1, 80);
    c.identification.lr = gen.uniform(0.001, 0.1);
    c.identification.selection = pick(TSelection::fixed, TSelection::phase1_val,
                                      TSelection::exhaustive);
    c.identification.fixed_epoch = gen.index(0, 5);
    c.identification.grid = {1, gen.index(2, 9)};
    e.methods.push_back(mb);
  }
  e.seeds.assign(gen.index(1, 4), 0);
  for (auto& s : e.seeds) s = gen.index(0, 1u << 30);
  e.output_dir = "out_" + std::to_string(gen.index(0, 99));
  return e;
}

const char* kMinimal = R"({"dataset": {"generator": "gaussian_toy"}, "methods": [{"method": "erm"}]})";

}  // namespace

TEST_CASE("minimal config fills and logs defaults") {
  const LoadedConfig lc = parse_config(kMinimal);
  const ExperimentConfig& c = lc.config;
  CHECK(c.dataset == DatasetConfig{});
  REQUIRE(c.methods.size() == 1);
  CHECK(c.methods[0].name == "erm");
  CHECK(c.methods[0].train == default_config(Method::erm));
  CHECK(c.seeds == std::vector<std::uint64_t>{0});
  CHECK(c.output_dir == "out");
  CHECK(has_line(lc.defaults, "methods[0].epochs = 60 (default)"));
  CHECK(has_line(lc.defaults, "methods[0].lr = 0.01 (default)"));
  CHECK(has_line(lc.defaults, "dataset.sigma = 0.25 (default)"));
  CHECK(has_line(lc.defaults, "seeds = [0] (default)"));
  CHECK(has_line(lc.defaults, "output_dir = \"out\" (default)"));
  for (const std::string& d : lc.defaults) CHECK(contains(d, "(default)"));
}

TEST_CASE("config errors carry the key path") {
  auto err = [](const std::string& text) { return message_of([&] { parse_config(text); }); };
  const std::string incompatible = err(
      R"({"dataset": {"generator": "gaussian_toy"},
          "methods": [{"method": "erm"}, {"method": "groupdro", "annotation": "none"}]})");
  CHECK(incompatible.rfind("methods[1]", 0) == 0);
  CHECK(contains(incompatible, "groupdro"));
  CHECK(contains(incompatible, "annotation=none"));

  CHECK(err(R"({"dataset": {"generator": "gaussian_toy"},
                "methods": [{"method": "erm", "epoch": 3}]})") ==
        "methods[0].epoch: unknown key");
  CHECK(err(R"({"dataset": {"generator": "gaussian_toy"}, "methods": [{"method": "erm"}],
                "seed": [1]})") == "seed: unknown key");
  CHECK(err(R"({"dataset": {"generator": "gaussian_toy", "mix": 1},
                "methods": [{"method": "erm"}]})") == "dataset.mix: unknown key");
  CHECK(err(R"({"dataset": {"generator": "gaussian_toy"},
                "methods": [{"method": "jm1", "mix": {"alpha": "gamma"}}]})")
            .rfind("methods[0].mix.alpha: ", 0) == 0);
  CHECK(err(R"({"dataset": {"generator": "gaussian_toy"},
                "methods": [{"method": "erm", "epochs": "ten"}]})")
            .rfind("methods[0].epochs: ", 0) == 0);
  CHECK(err(R"({"dataset": {"generator": "gaussian_toy"}, "methods": [{"epochs": 3}]})") ==
        "methods[0].method: required key missing");
  CHECK(err(R"({"dataset": {"generator": "moons"}, "methods": [{"method": "erm"}]})")
            .rfind("dataset.generator: ", 0) == 0);
  CHECK(contains(err(R"({"dataset": {"generator": "gaussian_toy"}, "methods": []})"), "methods"));
  CHECK(contains(err(R"({"dataset": {"generator": "gaussian"}, "methods": [{"method": "erm"}]})"),
                 "dataset.groups"));
}

TEST_CASE("parse errors report line and column") {
  const std::string text = "{\n  \"dataset\": {\"generator\": \"gaussian_toy\"},\n  \"methods\": [,]\n}";
  const std::string msg = message_of([&] { parse_config(text); });
  CHECK(contains(msg, "parse error at line 3, column 15"));
  CHECK(contains(message_of([] { parse_config("[1, 2]"); }), "object"));
}

TEST_CASE("property: serialize then parse is the identity") {
  oracle::Gen gen(41);
  for (int trial = 0; trial < 300; ++trial) {
    const ExperimentConfig c = random_config(gen);
    const std::string text = serialize_config(c);
    const LoadedConfig back = parse_config(text);
    CHECK(back.config == c);
    CHECK(back.defaults.empty());
    CHECK(serialize_config(back.config) == text);
  }
  const ExperimentConfig toy = toy_experiment();
  CHECK(parse_config(serialize_config(toy)).config == toy);
}

TEST_CASE("load_config reads files and reports missing ones") {
  const fs::path dir = scratch("load");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << kMinimal;
  CHECK(load_config(dir / "c.json").config == parse_config(kMinimal).config);
  try {
    load_config(dir / "missing.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
  fs::remove_all(dir);
}

TEST_CASE("generate_datasets uses independent split streams") {
  DatasetConfig d;
  d.n_train = 300;
  const DatasetBundle a = generate_datasets(d, 4);
  const DatasetBundle b = generate_datasets(d, 4);
  const DatasetBundle c = generate_datasets(d, 5);
  CHECK(a.train.size() == 300);
  CHECK(a.val.size() == 30);
  CHECK(a.test.size() == 2000);
  CHECK(a.train.split() == Split::train);
  CHECK(a.val.split() == Split::validation);
  CHECK(a.test.split() == Split::test);
  CHECK(a.train.feature_matrix() == b.train.feature_matrix());
  CHECK_FALSE(a.train.feature_matrix() == c.train.feature_matrix());
  CHECK(a.test.feature_matrix() == b.test.feature_matrix());

  d.generator = Generator::spurious;
  d.dim_core = 3;
  d.dim_spurious = 2;
  CHECK(generate_datasets(d, 1).train.dim() == 5);
}

TEST_CASE("sweep: a failing cell leaves its siblings intact") {
  ExperimentConfig e;
  e.dataset.generator = Generator::gaussian;
  e.dataset.groups = {{{0, 0}, 0.5, 0.25, {0.0, 0.0}, 0.3},
                      {{0, 1}, 0.0, 0.25, {0.0, 1.0}, 0.3},
                      {{1, 0}, 0.05, 0.25, {1.0, 0.0}, 0.3},
                      {{1, 1}, 0.45, 0.25, {1.0, 1.0}, 0.3}};
  e.dataset.n_train = 300;
  e.dataset.n_test = 200;
  e.seeds = {0, 1};
  auto block = [](Method m) {
    MethodBlock mb;
    mb.name = std::string(to_string(m));
    mb.train = default_config(m);
    mb.train.epochs = 2;
    mb.train.hidden = {4};
    return mb;
  };
  e.methods = {block(Method::erm), block(Method::groupdro), block(Method::mixup)};
  e.methods[2].train.annotation = AnnotationLevel::fine_grained;

  const fs::path one = scratch("sweep1"), three = scratch("sweep3");
  const std::vector<CellResult> cells = run_sweep(e, one, {}, 1);
  REQUIRE(cells.size() == 6);
  const char* order[] = {"erm", "erm", "groupdro", "groupdro", "mixup", "mixup"};
  for (std::size_t i = 0; i < 6; ++i) {
    CAPTURE(i);
    CHECK(cells[i].name == order[i]);
    CHECK(cells[i].seed == i % 2);
    CHECK(cells[i].error.has_value() == (cells[i].name == "groupdro"));
  }
  CHECK(cells[2].error->rfind("config: ", 0) == 0);
  CHECK(contains(*cells[2].error, "absent"));

  for (const char* f : {"history.csv", "metrics.csv", "model.ckpt", "config.json", "run.log",
                        "boundary.csv"})
    CHECK(fs::exists(one / "erm" / "1" / f));
  CHECK_FALSE(fs::exists(one / "groupdro" / "0" / "model.ckpt"));
  const std::string metrics = slurp(one / "metrics.csv");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 5);
  CHECK_FALSE(contains(metrics, "groupdro"));
  const std::string errors = slurp(one / "errors.csv");
  CHECK(contains(errors, "groupdro,0,"));
  CHECK(contains(errors, "groupdro,1,"));

  // The per-run config echo parses back to the block that ran.
  const std::string echo = slurp(one / "erm" / "0" / "config.json");
  const LoadedConfig lc = parse_config(
      R"({"dataset": {"generator": "gaussian_toy"}, "methods": [)" + echo + "]}");
  CHECK(lc.config.methods.at(0) == e.methods[0]);

  // Thread count does not change a byte.
  run_sweep(e, three, {}, 3);
  for (const char* f : {"metrics.csv", "errors.csv", "summary.svg", "curves.svg",
                        "erm/0/history.csv", "mixup/1/model.ckpt", "mixup/1/boundary.csv"})
    CHECK(slurp(one / f) == slurp(three / f));
  fs::remove_all(one);
  fs::remove_all(three);
}

TEST_CASE("run.log echoes defaults and the selected epoch") {
  const LoadedConfig lc = parse_config(
      R"({"dataset": {"generator": "gaussian_toy", "n_train": 200, "n_test": 100},
          "methods": [{"method": "jm1", "annotation": "coarse", "epochs": 2, "hidden": [4]}]})");
  const fs::path dir = scratch("runlog");
  const DatasetBundle data = generate_datasets(lc.config.dataset, 0);
  const CellResult cell = run_cell(lc.config, lc.config.methods[0], 0, data, dir, lc.defaults);
  CHECK_FALSE(cell.error);
  const std::string log = slurp(dir / "jm1" / "0" / "run.log");
  CHECK(contains(log, "methods[0].lr = 0.01 (default)"));
  CHECK(contains(log, "selected_epoch"));
  CHECK(contains(log, "buffer: oracle"));
  CHECK(contains(log, "buffer_quality S "));
  CHECK(fs::exists(dir / "jm1" / "0" / "buffer.txt"));
  CHECK(cell.row.metrics.identification_quality.has_value());
  CHECK(cell.row.metrics.identification_quality->precision == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("boundary bounds add a 10% margin") {
  std::vector<Sample> s = {{{0.0, -1.0}, 0, 0, {0, 0}, Partition::majority},
                           {{2.0, 1.0}, 0, 0, {0, 0}, Partition::majority}};
  const Dataset ds(s, 1, {{0, 0}}, AnnotationLevel::fine_grained, Split::train);
  const GridBounds b = boundary_bounds(ds);
  CHECK(b.x_min == doctest::Approx(-0.2));
  CHECK(b.x_max == doctest::Approx(2.2));
  CHECK(b.y_min == doctest::Approx(-1.2));
  CHECK(b.y_max == doctest::Approx(1.2));
}

TEST_CASE("command line errors are one machine-parsable line") {
  check_error_line(run_cli({"frobnicate"}), "config");
  check_error_line(run_cli({"train", "--config", "/nonexistent/c.json"}), "io");
  check_error_line(run_cli({"theorem-check", "--alpha", "0.5", "--n", "100"}), "config");
  check_error_line(run_cli({"evaluate", "--model", "/nonexistent/m.ckpt", "--data", "x"}), "io");

  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"dataset\": {\"generator\": \"gaussian_toy\"},\n\"methods\": [}";
  const CliRun parse = run_cli({"sweep", "--config", (dir / "bad.json").string()});
  check_error_line(parse, "config");
  CHECK(contains(parse.err, "line 2"));

  std::ofstream(dir / "two.json")
      << R"({"dataset": {"generator": "gaussian_toy"}, "methods": [{"method": "erm"}, {"method": "jtt"}]})";
  const CliRun two = run_cli({"train", "--config", (dir / "two.json").string()});
  check_error_line(two, "config");
  CHECK(contains(two.err, "--method"));
  fs::remove_all(dir);
}

TEST_CASE("command line: generate, train, evaluate") {
  const fs::path dir = scratch("flow");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"dataset": {"generator": "gaussian_toy", "n_train": 200,
      "n_test": 100}, "methods": [{"method": "erm", "epochs": 2, "hidden": [4]},
      {"method": "groupdro", "epochs": 2, "hidden": [4]}], "seeds": [3]})";
  const std::string cfg = (dir / "c.json").string();
  CHECK(run_cli({"generate", "--config", cfg, "--out", (dir / "data").string()}).code == 0);
  CHECK(fs::exists(dir / "data" / "3" / "test.txt"));

  const CliRun tr = run_cli({"train", "--config", cfg, "--method", "groupdro", "--data",
                             (dir / "data" / "3").string(), "--out", (dir / "runs").string()});
  CAPTURE(tr.err);
  CHECK(tr.code == 0);
  CHECK(contains(tr.out, "groupdro,3,"));
  const fs::path ckpt = dir / "runs" / "groupdro" / "3" / "model.ckpt";
  CHECK(fs::exists(ckpt));

  const CliRun ev = run_cli({"evaluate", "--model", ckpt.string(), "--data",
                             (dir / "data" / "3" / "test.txt").string(), "--out",
                             (dir / "eval").string()});
  CHECK(ev.code == 0);
  CHECK(slurp(dir / "eval" / "metrics.csv") == ev.out);
  // Same numbers as the training run's own test evaluation.
  const std::string run_metrics = slurp(dir / "runs" / "groupdro" / "3" / "metrics.csv");
  const auto tail = [](const std::string& s) {
    const std::string row = s.substr(s.find('\n') + 1);
    return row.substr(row.find(',', row.find(',') + 1));
  };
  CHECK(tail(run_metrics) == tail(ev.out));
  fs::remove_all(dir);
}

TEST_CASE("command line: gradcheck and theorem-check") {
  const CliRun g = run_cli({"gradcheck", "--n", "20", "--seed", "4"});
  CAPTURE(g.err);
  CHECK(g.code == 0);
  const CliRun t = run_cli({"theorem-check", "--alpha", "0.25", "--alpha", "1", "--sigma", "1",
                            "--n", "10000"});
  CHECK(t.code == 0);
  CHECK(std::count(t.out.begin(), t.out.end(), '\n') == 3);  // header + two rows
}
