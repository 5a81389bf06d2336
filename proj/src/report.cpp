#include "recpriv/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace recpriv {

namespace fs = std::filesystem;

const std::vector<std::string> kReportMetrics = {"ndcg",    "kld",      "popularity_lift",
                                                 "novelty", "coverage", "dpf"};
const std::vector<std::string> kReportGroups = {"overall", "niche", "diverse",
                                                "blockbuster", "I1", "I2"};

namespace {

double metric_value(const MetricValues& v, const std::string& metric) {
  if (metric == "ndcg") return v.ndcg;
  if (metric == "kld") return v.kld;
  if (metric == "popularity_lift") return v.popularity_lift;
  if (metric == "novelty") return v.novelty;
  if (metric == "coverage") return v.coverage;
  if (metric == "dpf") return v.dpf;
  throw std::invalid_argument("unknown metric: " + metric);
}

const MetricValues* group_values(const MetricsReport& r, const std::string& group) {
  if (group == "overall") return &r.overall;
  if (auto it = r.by_user_type.find(group); it != r.by_user_type.end()) return &it->second;
  if (auto it = r.by_item_group.find(group); it != r.by_item_group.end()) return &it->second;
  return nullptr;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

}  // namespace

std::vector<AggregateRow> aggregate_records(const std::vector<RunRecord>& records) {
  struct Key {
    std::string dataset, model, regime;
    double budget;
    std::string metric, group;
    bool operator<(const Key& o) const {
      return std::tie(dataset, model, regime, budget, metric, group) <
             std::tie(o.dataset, o.model, o.regime, o.budget, o.metric, o.group);
    }
  };
  struct Bucket {
    std::vector<double> values;
    std::vector<double> epsilons;
  };
  std::map<Key, Bucket> buckets;
  for (const RunRecord& rec : records) {
    if (rec.failed) continue;
    for (const std::string& metric : kReportMetrics) {
      for (const std::string& group : kReportGroups) {
        const MetricValues* v = group_values(rec.metrics, group);
        if (!v) continue;
        const double value = metric_value(*v, metric);
        if (std::isnan(value)) continue;
        Bucket& b = buckets[{rec.dataset, rec.model, rec.regime, rec.budget, metric, group}];
        b.values.push_back(value);
        b.epsilons.push_back(rec.realized_epsilon);
      }
    }
  }
  std::vector<AggregateRow> rows;
  rows.reserve(buckets.size());
  for (const auto& [key, bucket] : buckets) {
    AggregateRow row;
    row.dataset = key.dataset;
    row.model = key.model;
    row.regime = key.regime;
    row.budget = key.budget;
    row.metric = key.metric;
    row.group = key.group;
    row.mean = mean_of(bucket.values);
    row.std_dev = sample_std(bucket.values);
    row.n = static_cast<int>(bucket.values.size());
    const bool all_inf = std::all_of(bucket.epsilons.begin(), bucket.epsilons.end(),
                                     [](double e) { return std::isinf(e); });
    row.realized_epsilon = all_inf ? kInf : mean_of(bucket.epsilons);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

// minimal line-chart writer: log-x, markers, +-std whiskers, baseline rule
void write_svg(const std::string& path, const std::string& title,
               const std::map<std::string, std::vector<AggregateRow>>& series_by_regime,
               const AggregateRow* baseline) {
  constexpr double width = 640, height = 420;
  constexpr double ml = 70, mr = 20, mt = 40, mb = 50;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  double x_min = kInf, x_max = -kInf, y_min = kInf, y_max = -kInf;
  for (const auto& [regime, rows] : series_by_regime) {
    for (const AggregateRow& r : rows) {
      if (std::isinf(r.realized_epsilon) || r.realized_epsilon <= 0) continue;
      x_min = std::min(x_min, r.realized_epsilon);
      x_max = std::max(x_max, r.realized_epsilon);
      const double lo = r.mean - (std::isnan(r.std_dev) ? 0.0 : r.std_dev);
      const double hi = r.mean + (std::isnan(r.std_dev) ? 0.0 : r.std_dev);
      y_min = std::min(y_min, lo);
      y_max = std::max(y_max, hi);
    }
  }
  if (baseline) {
    y_min = std::min(y_min, baseline->mean);
    y_max = std::max(y_max, baseline->mean);
  }
  if (!std::isfinite(x_min) || x_min == x_max) {
    x_min = x_min == x_max && std::isfinite(x_min) ? x_min / 2 : 0.1;
    x_max = std::isfinite(x_max) ? std::max(x_max, x_min * 4) : 10.0;
  }
  if (!std::isfinite(y_min) || y_min == y_max) {
    y_min = std::isfinite(y_min) ? y_min - 0.5 : 0.0;
    y_max = std::isfinite(y_max) ? y_max + 0.5 : 1.0;
  }
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;
  const double lx_min = std::log10(x_min), lx_max = std::log10(x_max);
  auto X = [&](double eps) {
    return ml + (std::log10(eps) - lx_min) / (lx_max - lx_min) * plot_w;
  };
  auto Y = [&](double v) { return mt + (y_max - v) / (y_max - y_min) * plot_h; };

  const std::map<std::string, std::string> colors = {
      {"dpsgd", "#1f77b4"}, {"ldp", "#d62728"}, {"none", "#444444"}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write svg: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "' viewBox='0 0 " << width << " " << height << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << width / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
      << "</text>\n";
  out << "<rect x='" << ml << "' y='" << mt << "' width='" << plot_w << "' height='" << plot_h
      << "' fill='none' stroke='#999'/>\n";

  // x ticks at powers of ten
  for (int p = static_cast<int>(std::floor(lx_min)); p <= static_cast<int>(std::ceil(lx_max));
       ++p) {
    const double eps = std::pow(10.0, p);
    if (eps < x_min * 0.999 || eps > x_max * 1.001) continue;
    out << "<line x1='" << X(eps) << "' y1='" << mt << "' x2='" << X(eps) << "' y2='"
        << mt + plot_h << "' stroke='#eee'/>\n";
    out << "<text x='" << X(eps) << "' y='" << height - mb + 18
        << "' text-anchor='middle' font-size='11'>1e" << p << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = y_min + (y_max - y_min) * t / 4.0;
    out << "<line x1='" << ml << "' y1='" << Y(v) << "' x2='" << ml + plot_w << "' y2='" << Y(v)
        << "' stroke='#eee'/>\n";
    out << "<text x='" << ml - 6 << "' y='" << Y(v) + 4
        << "' text-anchor='end' font-size='11'>" << std::setprecision(3) << v << "</text>\n";
  }
  out << "<text x='" << ml + plot_w / 2 << "' y='" << height - 12
      << "' text-anchor='middle' font-size='12'>realized epsilon</text>\n";

  if (baseline) {
    out << "<line x1='" << ml << "' y1='" << Y(baseline->mean) << "' x2='" << ml + plot_w
        << "' y2='" << Y(baseline->mean)
        << "' stroke='#444444' stroke-dasharray='6,4' stroke-width='1.5'/>\n";
    out << "<text x='" << ml + plot_w - 4 << "' y='" << Y(baseline->mean) - 5
        << "' text-anchor='end' font-size='11' fill='#444444'>baseline</text>\n";
  }

  double legend_y = mt + 14;
  for (const auto& [regime, rows] : series_by_regime) {
    if (regime == "none") continue;
    std::vector<AggregateRow> pts = rows;
    std::erase_if(pts, [](const AggregateRow& r) {
      return std::isinf(r.realized_epsilon) || r.realized_epsilon <= 0;
    });
    std::sort(pts.begin(), pts.end(), [](const AggregateRow& a, const AggregateRow& b) {
      return a.realized_epsilon < b.realized_epsilon;
    });
    if (pts.empty()) continue;
    const std::string color = colors.count(regime) ? colors.at(regime) : "#2ca02c";
    std::ostringstream poly;
    for (const AggregateRow& r : pts) poly << X(r.realized_epsilon) << "," << Y(r.mean) << " ";
    out << "<polyline points='" << poly.str() << "' fill='none' stroke='" << color
        << "' stroke-width='1.5'/>\n";
    for (const AggregateRow& r : pts) {
      const double x = X(r.realized_epsilon);
      if (!std::isnan(r.std_dev) && r.std_dev > 0) {
        out << "<line x1='" << x << "' y1='" << Y(r.mean - r.std_dev) << "' x2='" << x
            << "' y2='" << Y(r.mean + r.std_dev) << "' stroke='" << color << "'/>\n";
      }
      out << "<circle cx='" << x << "' cy='" << Y(r.mean) << "' r='3.5' fill='" << color
          << "'/>\n";
    }
    out << "<rect x='" << ml + 8 << "' y='" << legend_y - 9 << "' width='10' height='10' fill='"
        << color << "'/>\n";
    out << "<text x='" << ml + 22 << "' y='" << legend_y << "' font-size='12'>" << regime
        << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace

std::vector<std::string> write_reports(const std::vector<RunRecord>& records,
                                       const std::string& reports_dir) {
  if (records.empty()) throw std::invalid_argument("write_reports: no records");
  if (std::all_of(records.begin(), records.end(), [](const RunRecord& r) { return r.failed; }))
    throw std::invalid_argument("write_reports: every record failed");
  const std::vector<AggregateRow> rows = aggregate_records(records);
  fs::create_directories(reports_dir);
  std::vector<std::string> written;

  for (const std::string& metric : kReportMetrics) {
    const fs::path csv_path = fs::path(reports_dir) / (metric + ".csv");
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write csv: " + csv_path.string());
    csv << "dataset,model,regime,budget,realized_epsilon,group,mean,std,n\n";
    for (const AggregateRow& r : rows) {
      if (r.metric != metric) continue;
      csv << r.dataset << ',' << r.model << ',' << r.regime << ',' << format_number(r.budget)
          << ',' << format_number(r.realized_epsilon) << ',' << r.group << ','
          << format_number(r.mean) << ',' << (r.n == 1 ? "" : format_number(r.std_dev)) << ','
          << r.n << '\n';
    }
    written.push_back(csv_path.string());
  }

  // one chart per (metric, dataset, model), overall group only
  std::map<std::pair<std::string, std::string>, bool> combos;
  for (const RunRecord& r : records)
    if (!r.failed) combos[{r.dataset, r.model}] = true;
  for (const std::string& metric : kReportMetrics) {
    for (const auto& [combo, _] : combos) {
      std::map<std::string, std::vector<AggregateRow>> series;
      const AggregateRow* baseline = nullptr;
      for (const AggregateRow& r : rows) {
        if (r.metric != metric || r.group != "overall" || r.dataset != combo.first ||
            r.model != combo.second)
          continue;
        if (r.regime == "none")
          baseline = &r;
        else
          series[r.regime].push_back(r);
      }
      if (series.empty() && !baseline) continue;
      const fs::path svg_path =
          fs::path(reports_dir) /
          (sanitize(metric) + "_" + sanitize(combo.first) + "_" + sanitize(combo.second) + ".svg");
      write_svg(svg_path.string(), metric + " / " + combo.first + " / " + combo.second, series,
                baseline);
      written.push_back(svg_path.string());
    }
  }
  return written;
}

}  // namespace recpriv
