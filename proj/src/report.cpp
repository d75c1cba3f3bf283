#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "otseg/error.hpp"
#include "otseg/eval.hpp"

namespace otseg {
namespace {

nlohmann::json stat_json(const CorrelationStat& s) {
  nlohmann::json j{{"n_pairs", s.n_pairs}};
  j["pearson"] = s.pearson ? nlohmann::json(*s.pearson) : nlohmann::json(nullptr);
  j["spearman"] = s.spearman ? nlohmann::json(*s.spearman) : nlohmann::json(nullptr);
  return j;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

nlohmann::json to_json(const CorrelationReport& report) {
  nlohmann::json per_target = nlohmann::json::object();
  for (const auto& [target, stat] : report.per_target) per_target[target] = stat_json(stat);
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : report.points) {
    points.push_back({{"target_id", p.target_id},
                      {"source_id", p.source_id},
                      {"otce", p.otce},
                      {"accuracy", p.accuracy},
                      {"domain_difference", p.domain_difference}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : report.failures) {
    failures.push_back(
        {{"source_id", f.source_id}, {"target_id", f.target_id}, {"message", f.message}});
  }
  const nlohmann::json pooled = stat_json(report.pooled);
  return nlohmann::json{{"metric", report.metric},
                        {"pearson", pooled["pearson"]},
                        {"spearman", pooled["spearman"]},
                        {"pooled", pooled},
                        {"per_target", per_target},
                        {"points", points},
                        {"failures", failures},
                        {"warnings", report.warnings}};
}

void write_report_json(const CorrelationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

void write_report_csv(const CorrelationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "target_id,source_id,otce,accuracy\n";
  for (const auto& p : report.points) {
    out << csv_field(p.target_id) << ',' << csv_field(p.source_id) << ','
        << fmt(p.otce, "%.17g") << ',' << fmt(p.accuracy, "%.17g") << '\n';
  }
}

std::string render_scatter_svg(const CorrelationReport& report, const std::string& target_id) {
  constexpr double kW = 480, kH = 360, kLeft = 64, kRight = 20, kTop = 40, kBottom = 52;
  std::vector<const ReportPoint*> pts;
  for (const auto& p : report.points) {
    if (p.target_id == target_id) pts.push_back(&p);
  }
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    auto [xmin, xmax] = std::minmax_element(pts.begin(), pts.end(),
                                            [](auto a, auto b) { return a->otce < b->otce; });
    auto [ymin, ymax] = std::minmax_element(
        pts.begin(), pts.end(), [](auto a, auto b) { return a->accuracy < b->accuracy; });
    x0 = (*xmin)->otce;
    x1 = (*xmax)->otce;
    y0 = (*ymin)->accuracy;
    y1 = (*ymax)->accuracy;
  }
  const auto pad = [](double& lo, double& hi) {
    const double span = hi - lo > 0 ? hi - lo : std::max(std::abs(hi), 1.0) * 0.1;
    lo -= span * 0.08;
    hi += span * 0.08;
  };
  pad(x0, x1);
  pad(y0, y1);
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;
  const auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto sy = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };

  std::string title = "target " + target_id;
  if (auto it = report.per_target.find(target_id);
      it != report.per_target.end() && it->second.pearson) {
    title += "  (pearson " + fmt(*it->second.pearson, "%.3f") + ")";
  }

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) + "\" height=\"" +
         fmt(kH) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         xml_escape(title) + "</text>\n";
  svg += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(pw) +
         "\" height=\"" + fmt(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const double yv = y0 + (y1 - y0) * t / 4.0;
    svg += "<text x=\"" + fmt(sx(xv)) + "\" y=\"" + fmt(kTop + ph + 16) +
           "\" text-anchor=\"middle\">" + fmt(xv, "%.3g") + "</text>\n";
    svg += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(sy(yv) + 4) +
           "\" text-anchor=\"end\">" + fmt(yv, "%.3g") + "</text>\n";
  }
  svg += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kH - 10) +
         "\" text-anchor=\"middle\">OTCE score (nats)</text>\n";
  svg += "<text transform=\"translate(16," + fmt(kTop + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" +
         xml_escape(report.metric.empty() ? "transfer accuracy" : report.metric) + "</text>\n";
  for (const auto* p : pts) {
    svg += "<circle cx=\"" + fmt(sx(p->otce)) + "\" cy=\"" + fmt(sy(p->accuracy)) +
           "\" r=\"4\" fill=\"steelblue\"><title>" + xml_escape(p->source_id) +
           "</title></circle>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace otseg
