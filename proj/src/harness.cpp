#include "groupmix/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <thread>

#include "groupmix/checkpoint.hpp"
#include "groupmix/error.hpp"

namespace groupmix {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  os << text;
  require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

std::string format_error(const std::exception& e) {
  if (const auto* ge = dynamic_cast<const Error*>(&e))
    return std::string(category(ge->kind())) + ": " + ge->what();
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return std::string("io: ") + e.what();
  return std::string("data: ") + e.what();
}

std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

GridBounds boundary_bounds(const Dataset& ds) {
  require(ds.dim() == 2, ErrorKind::unsupported, "boundary export needs 2D inputs");
  GridBounds b{ds.features(0)[0], ds.features(0)[0], ds.features(0)[1], ds.features(0)[1]};
  for (std::size_t i = 1; i < ds.size(); ++i) {
    const auto x = ds.features(i);
    b.x_min = std::min(b.x_min, x[0]);
    b.x_max = std::max(b.x_max, x[0]);
    b.y_min = std::min(b.y_min, x[1]);
    b.y_max = std::max(b.y_max, x[1]);
  }
  const double mx = 0.1 * std::max(b.x_max - b.x_min, 1e-6);
  const double my = 0.1 * std::max(b.y_max - b.y_min, 1e-6);
  return {b.x_min - mx, b.x_max + mx, b.y_min - my, b.y_max + my};
}

CellResult run_cell(const ExperimentConfig& cfg, const MethodBlock& block, std::uint64_t seed,
                    const DatasetBundle& data, const fs::path& dir,
                    const std::vector<std::string>& defaults) {
  TrainConfig tc = block.train;
  tc.seed = seed;
  // Per-cell copies: audits are per object and cells may run concurrently.
  const Dataset train = data.train.with_annotation(tc.annotation);
  const Dataset val = data.val.with_annotation(tc.annotation);
  const Dataset test = data.test.with_annotation(AnnotationLevel::fine_grained);

  TrainResult result = groupmix::train(tc, train, val);

  CellResult cell;
  cell.name = block.name;
  cell.seed = seed;
  cell.row = {block.name, seed, evaluate(result.model, test)};
  if (result.history.buffer) {
    const Dataset truth = data.train;
    cell.row.metrics.identification_quality =
        identification_quality(*result.history.buffer, oracle_partition(truth));
  }
  cell.history = {block.name, seed, result.history};

  const fs::path out = dir / block.name / std::to_string(seed);
  fs::create_directories(out);
  write_history(result.history, out / "history.csv");
  const ReportRow rows[] = {cell.row};
  write_text(out / "metrics.csv", metrics_csv(rows));
  save_checkpoint(result.model, out / "model.ckpt");
  write_text(out / "config.json", serialize_method(block));
  if (result.history.buffer) write_buffer(*result.history.buffer, out / "buffer.txt");
  if (!result.history.identification.empty())
    write_identification_history(result.history.identification, out / "identification.csv");
  if (train.dim() == 2)
    write_boundary(export_boundary(result.model, boundary_bounds(train), 100, 100),
                   out / "boundary.csv");

  std::string log;
  log += "method " + std::string(to_string(tc.method)) + " name " + block.name + " seed " +
         std::to_string(seed) + "\n";
  log += "dataset " + std::string(to_string(cfg.dataset.generator)) + " n_train " +
         std::to_string(train.size()) + " n_val " + std::to_string(val.size()) + " n_test " +
         std::to_string(test.size()) + "\n";
  for (const std::string& d : defaults) log += "default " + d + "\n";
  for (const std::string& line : result.history.log) log += line + "\n";
  if (const auto& q = cell.row.metrics.identification_quality)
    log += "buffer_quality S " + std::to_string(q->S) + " NS " + std::to_string(q->NS) +
           " minority " + std::to_string(q->minority_total) + " precision " +
           std::to_string(q->precision) + " recall " + std::to_string(q->recall) + "\n";
  log += "selected_epoch " + std::to_string(result.history.selected_epoch) + " criterion " +
         std::string(to_string(result.history.criterion)) + "\n";
  write_text(out / "run.log", log);
  return cell;
}

std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, const fs::path& dir,
                                  const std::vector<std::string>& defaults,
                                  unsigned max_threads) {
  fs::create_directories(dir);
  std::map<std::uint64_t, DatasetBundle> bundles;
  std::map<std::uint64_t, std::string> bundle_errors;
  for (std::uint64_t seed : cfg.seeds) {
    if (bundles.count(seed) || bundle_errors.count(seed)) continue;
    try {
      bundles.emplace(seed, generate_datasets(cfg.dataset, seed));
    } catch (const std::exception& e) {
      bundle_errors.emplace(seed, format_error(e));
    }
  }

  std::vector<CellResult> cells;
  for (const MethodBlock& mb : cfg.methods)
    for (std::uint64_t seed : cfg.seeds) {
      CellResult c;
      c.name = mb.name;
      c.seed = seed;
      cells.push_back(std::move(c));
    }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const MethodBlock& mb = cfg.methods[i / cfg.seeds.size()];
      const std::uint64_t seed = cells[i].seed;
      if (auto it = bundle_errors.find(seed); it != bundle_errors.end()) {
        cells[i].error = it->second;
        continue;
      }
      try {
        cells[i] = run_cell(cfg, mb, seed, bundles.at(seed), dir, defaults);
      } catch (const std::exception& e) {
        cells[i].error = format_error(e);
      }
    }
  };
  unsigned threads = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, cells.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<ReportRow> rows;
  std::vector<ReportHistory> histories;
  std::string errors = "method,seed,error\n";
  for (const CellResult& c : cells) {
    if (c.error) {
      errors += c.name + "," + std::to_string(c.seed) + "," + csv_escape(*c.error) + "\n";
    } else {
      rows.push_back(c.row);
      histories.push_back(c.history);
    }
  }
  if (!rows.empty()) emit_report(rows, histories, dir);
  write_text(dir / "errors.csv", errors);
  return cells;
}

}  // namespace groupmix
