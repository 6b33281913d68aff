#include "hccnet/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace hccnet {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "label,seed,metric,value\n";
  for (const auto& run : report.runs)
    for (const auto& m : metric_names()) os << report.label << ',' << run.seed << ',' << m << ',' << fmt(run.values.at(m), 17) << '\n';
  return os.str();
}

std::string reliability_svg(const BinnedCalibration& cal, const std::string& title) {
  const double w = 360, h = 360, left = 50, top = 30, plot = 280;
  const std::size_t n = cal.bins.size();
  const double bw = n ? plot / double(n) : plot;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n"
     << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">" << escape_xml(title)
     << "</text>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot << "\" height=\"" << plot
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t b = 0; b < n; ++b) {
    const auto& bin = cal.bins[b];
    if (bin.count == 0) continue;
    const double bh = bin.accuracy * plot;
    os << "<rect class=\"bin\" x=\"" << fmt(left + double(b) * bw) << "\" y=\"" << fmt(top + plot - bh)
       << "\" width=\"" << fmt(bw) << "\" height=\"" << fmt(bh)
       << "\" fill=\"#1f77b4\" fill-opacity=\"0.8\" stroke=\"#0b3c5d\"><title>n=" << bin.count
       << " conf=" << fmt(bin.confidence, 4) << " acc=" << fmt(bin.accuracy, 4) << "</title></rect>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot << "\" x2=\"" << left + plot << "\" y2=\"" << top
     << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n"
     << "<text x=\"" << left + plot / 2 - 40 << "\" y=\"" << top + plot + 30
     << "\" font-size=\"12\" font-family=\"sans-serif\">Confidence</text>\n"
     << "<text x=\"14\" y=\"" << top + plot / 2 + 25 << "\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 14 "
     << top + plot / 2 + 25 << ")\">Accuracy</text>\n"
     << "<text x=\"" << left + 8 << "\" y=\"" << top + 18 << "\" font-size=\"12\" font-family=\"sans-serif\">ECE = "
     << fmt(cal.ece, 4) << "</text>\n"
     << "</svg>\n";
  return os.str();
}

std::string gain_svg(const std::map<std::string, GainCurve>& curves, const std::vector<std::string>& metrics) {
  const double w = 420, h = 360, left = 50, top = 30, plot = 280;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot << "\" height=\"" << plot
     << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top + plot << "\" x2=\"" << left + plot << "\" y2=\"" << top
     << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  std::size_t k = 0;
  for (const auto& name : metrics) {
    auto it = curves.find(name);
    if (it == curves.end()) continue;
    const auto& g = it->second;
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline class=\"gain\" fill=\"none\" stroke=\"" << color << "\" points=\"" << left << ','
       << top + plot;
    for (std::size_t i = 0; i < g.gains.size(); ++i)
      os << ' ' << fmt(left + g.expected[i] * plot) << ',' << fmt(top + plot - std::clamp(g.gains[i], 0.0, 1.0) * plot);
    os << "\"/>\n"
       << "<text x=\"" << left + plot + 10 << "\" y=\"" << top + 14 + 16 * double(k) << "\" font-size=\"11\" fill=\""
       << color << "\" font-family=\"sans-serif\">" << escape_xml(name) << " (MAE " << fmt(g.mae, 3)
       << ")</text>\n";
    ++k;
  }
  os << "<text x=\"" << left + plot / 2 - 50 << "\" y=\"" << top + plot + 30
     << "\" font-size=\"12\" font-family=\"sans-serif\">Expected gain i/n</text>\n"
     << "</svg>\n";
  return os.str();
}

void emit_report(const MetricsReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "metrics.json", json(report).dump(2) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(report));
  write_text(dir / "reliability.svg", reliability_svg(report.calibration, report.label + " reliability"));
  write_text(dir / "gain.svg", gain_svg(report.gains, {"accuracy", "precision", "recall", "f1", "auroc", "auprc"}));
}

MetricsReport load_report(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "metrics.json" : path;
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot read report " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ReportSchemaError("malformed report " + file.string() + ": " + e.what());
  }
  if (j.value("schema_version", -1) != kReportSchemaVersion)
    throw ReportSchemaError("report " + file.string() + " has an unsupported schema version");
  return j.get<MetricsReport>();
}

std::vector<ComparisonRow> compare_reports(const MetricsReport& baseline, const MetricsReport& finetuned) {
  if (baseline.schema_version != finetuned.schema_version) throw ReportSchemaError("report schema versions differ");
  std::vector<ComparisonRow> rows;
  for (const auto& name : metric_names()) {
    auto b = baseline.aggregate.find(name);
    auto f = finetuned.aggregate.find(name);
    if (b == baseline.aggregate.end() || f == finetuned.aggregate.end()) continue;
    ComparisonRow r{name, b->second.mean, f->second.mean, std::nullopt};
    if (r.baseline != 0.0) r.relative_change = (r.finetuned - r.baseline) / r.baseline;
    rows.push_back(r);
  }
  return rows;
}

std::string render_comparison(const std::vector<ComparisonRow>& rows, const std::string& baseline_label,
                              const std::string& finetuned_label) {
  std::ostringstream os;
  os << "| metric | " << baseline_label << " | " << finetuned_label << " | rel. change |\n";
  os << "|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.metric << " | " << fmt(r.baseline, 4) << " | " << fmt(r.finetuned, 4) << " | ";
    if (r.relative_change) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * *r.relative_change);
      os << buf;
    } else {
      os << "undefined";
    }
    os << " |\n";
  }
  return os.str();
}

json comparison_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"metric", r.metric},
                   {"baseline", r.baseline},
                   {"finetuned", r.finetuned},
                   {"relative_change", r.relative_change ? json(*r.relative_change) : json(nullptr)}});
  return out;
}

}  // namespace hccnet
