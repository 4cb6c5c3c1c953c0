#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "einv/error.hpp"
#include "einv/experiment.hpp"
#include "einv/image.hpp"

namespace einv {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMetricsSchema = "einv-metrics/1";

const Rgb kInk{30, 30, 30};
const Rgb kGrid{220, 220, 220};
const Rgb kBlue{31, 119, 180};
const Rgb kRed{214, 39, 40};
const Rgb kOrange{255, 127, 14};

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string slug(const std::string& s) {
  std::string out;
  for (const char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '-';
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

// Plot area with a y axis from 0 to y_max and horizontal grid lines.
struct Frame {
  int left = 60, right = 20, top = 40, bottom = 70;
  int width, height;
  double y_max;

  int x0() const { return left; }
  int x1() const { return width - right; }
  int y(double v) const {
    const double t = std::clamp(v / y_max, 0.0, 1.0);
    return static_cast<int>(std::lround((height - bottom) - t * ((height - bottom) - top)));
  }

  void draw(Canvas& c, const std::string& title, const std::string& y_label) const {
    for (int i = 0; i <= 5; ++i) {
      const double v = y_max * i / 5.0;
      c.line(x0(), y(v), x1(), y(v), kGrid);
      c.text(x0() - 6 - Canvas::text_width(fmt(v, 2)), y(v) - 3, fmt(v, 2), kInk);
    }
    c.line(x0(), y(0), x1(), y(0), kInk);
    c.line(x0(), y(0), x0(), top, kInk);
    c.text((width - Canvas::text_width(title, 2)) / 2, 10, title, kInk, 2);
    c.text(4, top - 14, y_label, kInk);
  }
};

double nice_max(double v) {
  if (v <= 1.0) return 1.0;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (const double m : {1.0, 2.0, 5.0, 10.0}) {
    if (v <= m * p) return m * p;
  }
  return 10.0 * p;
}

void bar_chart(const fs::path& path, const std::string& title, const std::vector<std::string>& labels,
               const std::vector<double>& values, const std::string& y_label) {
  const int bars = static_cast<int>(values.size());
  const int width = std::max({360, 80 + bars * 70, Canvas::text_width(title, 2) + 40});
  Frame f{60, 20, 40, 70, width, 400, nice_max(values.empty() ? 1.0 : *std::max_element(values.begin(), values.end()))};
  Canvas c(width, f.height);
  f.draw(c, title, y_label);
  const double slot = static_cast<double>(f.x1() - f.x0()) / std::max(1, bars);
  for (int i = 0; i < bars; ++i) {
    const int xa = f.x0() + static_cast<int>(slot * i + slot * 0.2);
    const int xb = f.x0() + static_cast<int>(slot * (i + 1) - slot * 0.2);
    c.fill_rect(xa, f.y(values[i]), xb, f.y(0), kBlue);
    const auto v = fmt(values[i]);
    c.text((xa + xb - Canvas::text_width(v)) / 2, f.y(values[i]) - 10, v, kInk);
    // labels wrap onto a second line at '/'
    const auto& l = labels[i];
    const auto cut = l.find('/');
    const auto line1 = l.substr(0, cut);
    const auto line2 = cut == std::string::npos ? std::string() : l.substr(cut + 1);
    c.text((xa + xb - Canvas::text_width(line1)) / 2, f.y(0) + 8, line1, kInk);
    c.text((xa + xb - Canvas::text_width(line2)) / 2, f.y(0) + 20, line2, kInk);
  }
  c.save_png(path);
}

struct SeriesPoint {
  std::int64_t k;
  std::uint64_t seed;
  double value;
};

// Per-seed dots and the mean curve for each method, x = ensemble size.
void sweep_chart(const fs::path& path, const std::string& title, const std::map<std::string, std::vector<SeriesPoint>>& series) {
  std::set<std::int64_t> ks;
  double top = 0.0;
  for (const auto& [_, pts] : series) {
    for (const auto& p : pts) {
      ks.insert(p.k);
      top = std::max(top, p.value);
    }
  }
  Frame f{60, 20, 40, 70, 560, 400, nice_max(top)};
  Canvas c(f.width, f.height);
  f.draw(c, title, "ATTACK ACCURACY");
  const std::vector<std::int64_t> xs(ks.begin(), ks.end());
  const double slot = static_cast<double>(f.x1() - f.x0()) / std::max<std::size_t>(1, xs.size());
  const auto x_of = [&](std::int64_t k, int offset) {
    const auto i = std::find(xs.begin(), xs.end(), k) - xs.begin();
    return f.x0() + static_cast<int>(slot * (i + 0.5)) + offset;
  };
  for (const auto k : xs) {
    const auto label = "M=" + std::to_string(k);
    c.text(x_of(k, 0) - Canvas::text_width(label) / 2, f.y(0) + 8, label, kInk);
  }
  int legend_y = f.y(0) + 30, index = 0;
  for (const auto& [method, pts] : series) {
    const Rgb dot = index == 0 ? kBlue : kRed;
    const Rgb curve = index == 0 ? kBlue : kOrange;
    const int offset = index == 0 ? -6 : 6;
    std::map<std::int64_t, std::vector<double>> by_k;
    for (const auto& p : pts) {
      c.dot(x_of(p.k, offset), f.y(p.value), 3, dot);
      by_k[p.k].push_back(p.value);
    }
    int px = -1, py = -1;
    for (const auto& [k, v] : by_k) {
      double mean = 0;
      for (const double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      const int x = x_of(k, 0), y = f.y(mean);
      if (px >= 0) {
        c.line(px, py, x, y, curve);
        c.line(px, py + 1, x, y + 1, curve);
      }
      c.dot(x, y, 4, curve);
      px = x;
      py = y;
    }
    c.fill_rect(f.x0() + 120 * index, legend_y, f.x0() + 120 * index + 10, legend_y + 8, curve);
    const auto upper = [](std::string s) {
      for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      return s;
    };
    c.text(f.x0() + 120 * index + 14, legend_y, "AVG. " + upper(method), kInk);
    ++index;
  }
  c.save_png(path);
}

void check_schema(const RunManifest& m) {
  if (!m.metrics.contains("schema") || m.metrics.at("schema") != kMetricsSchema) {
    throw ValidationError("manifest '" + m.run_id + "' has an incompatible metric schema (expected " + kMetricsSchema +
                          "); run the experiment to completion first");
  }
  if (!m.metrics.contains("summary") || !m.metrics.at("summary").is_object()) {
    throw ValidationError("manifest '" + m.run_id + "' has no metrics.summary");
  }
}

}  // namespace

std::vector<fs::path> render_figures(const std::vector<RunManifest>& manifests, const fs::path& out_dir) {
  if (manifests.empty()) throw ValidationError("render_figures: no manifests given");
  for (const auto& m : manifests) check_schema(m);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  const auto emit_text = [&](const fs::path& p, const std::string& text) {
    write_text_file(p, text);
    written.push_back(p);
  };

  // comparison table; every value names the metrics key it came from
  static const char* kMetrics[] = {"attack_accuracy", "feature_distance_eva", "knn_distance_eva",
                                   "feature_distance_generic", "knn_distance_generic"};
  std::ostringstream csv, txt;
  csv << "run_id,entry,mode,loss,group,method,k,pair_distance";
  for (const char* kind : {"raw", "filtered"}) {
    for (const char* metric : kMetrics) csv << "," << kind << "." << metric << ".mean," << kind << "." << metric << ".std";
  }
  csv << ",metric_key\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-22s %-40s %-17s %-17s %-10s %-10s\n", "run", "entry", "acc raw", "acc filtered",
                "feat eva", "knn eva");
  txt << line;
  for (const auto& m : manifests) {
    for (const auto& [key, e] : m.metrics.at("summary").items()) {
      csv << csv_field(m.run_id) << "," << csv_field(key) << "," << e.at("mode").get<std::string>() << ","
          << csv_field(e.at("loss").get<std::string>()) << "," << csv_field(e.at("group").get<std::string>()) << ","
          << e.at("method").get<std::string>() << "," << e.at("k").get<std::int64_t>() << ","
          << (e.contains("pair_distance") ? fmt(e.at("pair_distance").get<double>(), 6) : "");
      for (const char* kind : {"raw", "filtered"}) {
        for (const char* metric : kMetrics) {
          const auto& s = e.at(kind).at(metric);
          csv << "," << fmt(s.at("mean").get<double>(), 6) << "," << fmt(s.at("std").get<double>(), 6);
        }
      }
      csv << "," << csv_field("metrics.summary[\"" + key + "\"]") << "\n";
      const auto& raw = e.at("raw");
      const auto& filt = e.at("filtered");
      const auto pm = [](const json& s) { return fmt(s.at("mean").get<double>()) + "+-" + fmt(s.at("std").get<double>()); };
      std::snprintf(line, sizeof line, "%-22s %-40s %-17s %-17s %-10s %-10s\n", m.run_id.c_str(), key.c_str(),
                    pm(raw.at("attack_accuracy")).c_str(), pm(filt.at("attack_accuracy")).c_str(),
                    fmt(raw.at("feature_distance_eva").at("mean").get<double>(), 2).c_str(),
                    fmt(raw.at("knn_distance_eva").at("mean").get<double>(), 2).c_str());
      txt << line;
    }
  }
  emit_text(out_dir / "summary.csv", csv.str());
  emit_text(out_dir / "summary.txt", txt.str());

  for (const auto& m : manifests) {
    const auto& summary = m.metrics.at("summary");
    std::set<std::string> modes;
    for (const auto& [_, e] : summary.items()) modes.insert(e.at("mode").get<std::string>());
    for (const auto& mode : modes) {
      const auto base = slug(m.run_id) + "-" + mode;
      // distance sweep: one bar per pair, ordered by distance
      std::vector<std::tuple<double, std::string, double, std::string>> pairs;
      std::map<std::string, std::map<std::string, std::vector<SeriesPoint>>> sweeps;  // loss -> method -> points
      std::vector<std::pair<std::string, double>> other;
      for (const auto& [key, e] : summary.items()) {
        if (e.at("mode") != mode) continue;
        const auto method = e.at("method").get<std::string>();
        const double acc = e.at("raw").at("attack_accuracy").at("mean").get<double>();
        if (method == "distance_pairs") {
          pairs.emplace_back(e.at("pair_distance").get<double>(), e.at("loss").get<std::string>(), acc, key);
        } else if (method == "fms" || method == "rs") {
          const auto loss = e.at("loss").get<std::string>();
          for (const auto& seed : e.at("seeds")) {
            const auto cell = key + "/s" + std::to_string(seed.get<std::uint64_t>());
            sweeps[loss][method].push_back({e.at("k").get<std::int64_t>(), seed.get<std::uint64_t>(),
                                            m.metrics.at("cells").at(cell).at("raw").at("attack_accuracy").at("overall").get<double>()});
          }
        } else {
          other.emplace_back(key, acc);
        }
      }
      if (!pairs.empty()) {
        std::sort(pairs.begin(), pairs.end());
        std::vector<std::string> labels;
        std::vector<double> values;
        std::ostringstream out;
        out << "rank,loss,pair_distance,attack_accuracy,metric_key\n";
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          const auto& [d, loss, acc, key] = pairs[i];
          labels.push_back("D=" + fmt(d, 2) + "/" + loss);
          values.push_back(acc);
          out << i << "," << csv_field(loss) << "," << fmt(d, 6) << "," << fmt(acc, 6) << ","
              << csv_field("metrics.summary[\"" + key + "\"].raw.attack_accuracy.mean") << "\n";
        }
        bar_chart(out_dir / ("fig5-" + base + ".png"), "ACCURACY VS PAIR DISTANCE " + mode, labels, values,
                  "ATTACK ACCURACY");
        written.push_back(out_dir / ("fig5-" + base + ".png"));
        emit_text(out_dir / ("fig5-" + base + ".csv"), out.str());
      }
      for (const auto& [loss, series] : sweeps) {
        const auto name = "fig6-" + base + "-" + slug(loss);
        std::ostringstream out;
        out << "method,k,seed,attack_accuracy,metric_key\n";
        for (const auto& [method, pts] : series) {
          for (const auto& p : pts) {
            const auto cell = mode + "/" + loss + "/" + method + "-k" + std::to_string(p.k) + "/s" + std::to_string(p.seed);
            out << method << "," << p.k << "," << p.seed << "," << fmt(p.value, 6) << ","
                << csv_field("metrics.cells[\"" + cell + "\"].raw.attack_accuracy.overall") << "\n";
          }
        }
        sweep_chart(out_dir / (name + ".png"), "FMS VS RS " + mode, series);
        written.push_back(out_dir / (name + ".png"));
        emit_text(out_dir / (name + ".csv"), out.str());
      }
      if (!other.empty()) {
        std::vector<std::string> labels;
        std::vector<double> values;
        std::ostringstream out;
        out << "entry,attack_accuracy,metric_key\n";
        for (const auto& [key, acc] : other) {
          // drop the mode prefix; it is in the title
          labels.push_back(key.substr(key.find('/') + 1));
          values.push_back(acc);
          out << csv_field(key) << "," << fmt(acc, 6) << ","
              << csv_field("metrics.summary[\"" + key + "\"].raw.attack_accuracy.mean") << "\n";
        }
        bar_chart(out_dir / ("bars-" + base + ".png"), "RAW ATTACK ACCURACY " + mode, labels, values, "ATTACK ACCURACY");
        written.push_back(out_dir / ("bars-" + base + ".png"));
        emit_text(out_dir / ("bars-" + base + ".csv"), out.str());
      }
    }
  }
  return written;
}

}  // namespace einv
