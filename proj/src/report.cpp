#include "groupmix/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "groupmix/error.hpp"

namespace groupmix {
namespace {

std::string num(double v, int prec = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << content;
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string summary_svg(std::span<const ReportRow> rows) {
  // Method order follows first appearance.
  std::vector<std::string> methods;
  std::map<std::string, std::pair<double, double>> sums;
  std::map<std::string, int> counts;
  for (const ReportRow& r : rows) {
    if (!counts.count(r.method)) methods.push_back(r.method);
    sums[r.method].first += r.metrics.average_accuracy;
    sums[r.method].second += r.metrics.worst_group_accuracy;
    ++counts[r.method];
  }
  const double bar = 18, gap = 14, left = 50, top = 20, height = 200;
  const double width = left + methods.size() * (2 * bar + gap) + 20;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width, 0) << "\" height=\""
     << num(top + height + 60, 0) << "\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << num(width - 10, 0)
     << "\" y2=\"" << top + height << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + height - t * height / 4;
    os << "<text x=\"" << left - 8 << "\" y=\"" << num(y + 4, 1)
       << "\" font-size=\"10\" text-anchor=\"end\">" << num(t * 0.25, 2) << "</text>\n";
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const double x = left + gap / 2 + m * (2 * bar + gap);
    const double avg = sums[methods[m]].first / counts[methods[m]];
    const double worst = sums[methods[m]].second / counts[methods[m]];
    os << "<rect x=\"" << num(x, 1) << "\" y=\"" << num(top + height * (1 - avg), 2)
       << "\" width=\"" << bar << "\" height=\"" << num(height * avg, 2)
       << "\" fill=\"#1f77b4\"/>\n";
    os << "<rect x=\"" << num(x + bar, 1) << "\" y=\"" << num(top + height * (1 - worst), 2)
       << "\" width=\"" << bar << "\" height=\"" << num(height * worst, 2)
       << "\" fill=\"#d62728\"/>\n";
    os << "<text x=\"" << num(x + bar, 1) << "\" y=\"" << top + height + 14
       << "\" font-size=\"10\" text-anchor=\"middle\">" << methods[m] << "</text>\n";
  }
  os << "<text x=\"" << left << "\" y=\"" << top + height + 40
     << "\" font-size=\"10\">blue: average accuracy, red: worst-group accuracy</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string curves_svg(std::span<const ReportHistory> histories) {
  std::size_t max_epoch = 1;
  for (const auto& h : histories) max_epoch = std::max(max_epoch, h.history.epochs.size());
  const double left = 50, top = 20, w = 480, h = 200;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(left + w + 160, 0)
     << "\" height=\"" << num(top + h + 40, 0) << "\">\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < histories.size(); ++i) {
    const RunHistory& rh = histories[i].history;
    const char* color = kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const EpochRecord& e : rh.epochs) {
      const double v = rh.criterion == Selection::worst ? e.val_worst.value_or(e.val_avg) : e.val_avg;
      const double x = left + w * static_cast<double>(e.epoch) / static_cast<double>(max_epoch);
      os << num(x, 2) << ',' << num(top + h * (1 - v), 2) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << left + w + 8 << "\" y=\"" << num(top + 12 + 12.0 * i, 0)
       << "\" font-size=\"10\" fill=\"" << color << "\">" << histories[i].method << " seed "
       << histories[i].seed << "</text>\n";
  }
  os << "<text x=\"" << left << "\" y=\"" << top + h + 20
     << "\" font-size=\"10\">validation selection criterion per epoch</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::string metrics_csv(std::span<const ReportRow> rows) {
  std::set<GroupId> all;
  for (const ReportRow& r : rows) all.insert(r.metrics.groups.begin(), r.metrics.groups.end());
  std::ostringstream os;
  os << "method,seed,avg_acc,worst_acc";
  for (const GroupId& g : all) os << ",acc_" << to_string(g);
  os << ",group_avg_acc\n";
  for (const ReportRow& r : rows) {
    os << r.method << ',' << r.seed << ',' << num(r.metrics.average_accuracy) << ','
       << num(r.metrics.worst_group_accuracy);
    for (const GroupId& g : all) {
      os << ',';
      const auto it = std::find(r.metrics.groups.begin(), r.metrics.groups.end(), g);
      if (it != r.metrics.groups.end())
        os << num(r.metrics.per_group_accuracy[static_cast<std::size_t>(it - r.metrics.groups.begin())]);
    }
    os << ',' << num(r.metrics.group_average_accuracy) << '\n';
  }
  return os.str();
}

void emit_report(std::span<const ReportRow> rows, std::span<const ReportHistory> histories,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "metrics.csv", metrics_csv(rows));
  write_file(dir / "summary.svg", summary_svg(rows));
  write_file(dir / "curves.svg", curves_svg(histories));
}

void write_boundary(const BoundaryGrid& grid, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "x1,x2,class\n";
  for (std::size_t iy = 0; iy < grid.ny; ++iy)
    for (std::size_t ix = 0; ix < grid.nx; ++ix)
      os << num(grid.xs[ix]) << ',' << num(grid.ys[iy]) << ',' << grid.at(ix, iy) << '\n';
  write_file(path, os.str());
}

}  // namespace groupmix
