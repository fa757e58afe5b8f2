#include "hyperpersona/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hyperpersona {

namespace {

using Json = nlohmann::ordered_json;

Json breakdown_json(const ParamBreakdown& b) {
  Json out = Json::object();
  for (const auto& [name, n] : b.items) out[name] = n;
  return out;
}

Json correlation_json(const Correlation& c) {
  if (c.value) return *c.value;
  return nullptr;
}

Json metrics_object(const MetricsReport& r) {
  Json j;
  j["annotator_f1"] = r.annotator_f1;
  j["global_f1"] = r.global_f1;
  j["global_accuracy"] = r.global_accuracy;
  j["micro_f1"] = r.micro_f1;
  j["disagreement_corr"] = correlation_json(r.disagreement_corr);
  if (!r.disagreement_corr.value) j["disagreement_corr_reason"] = r.disagreement_corr.reason;
  j["trainable_params"] = r.trainable_params;
  j["params_breakdown"] = breakdown_json(r.params_breakdown);
  Json per = Json::object();
  for (const auto& [id, f1] : r.per_annotator_f1) per[id] = f1;
  j["per_annotator_f1"] = per;
  return j;
}

Json config_json(const std::vector<std::pair<std::string, std::string>>& config) {
  Json out = Json::object();
  for (const auto& [k, v] : config) out[k] = v;
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string pad(const std::string& s, std::size_t width) {
  // Width in code points so "±" counts once.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

std::size_t display_width(const std::string& s) {
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return cps;
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) line += (c ? "  " : "") + pad(row[c], widths[c]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

std::string sci(std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1e", static_cast<double>(n));
  return buf;
}

}  // namespace

std::string metrics_json(const MetricsReport& report, int indent) { return metrics_object(report).dump(indent); }

std::string run_report_json(const RunResult& run) {
  Json j;
  j["system"] = to_string(run.system);
  j["seed"] = run.seed;
  j["fingerprint"] = run.fingerprint;
  j["config"] = config_json(run.config);
  j["macro_f1_convention"] = kMacroF1Convention;
  j["train_loss"] = run.train_loss;
  j["dev_micro_f1_per_epoch"] = run.dev_micro_f1;
  j["dev"] = metrics_object(run.dev);
  j["test"] = metrics_object(run.test);
  j["wall_seconds"] = run.seconds;
  return j.dump(2) + "\n";
}

std::string aggregate_report_json(const Aggregate& agg, const std::vector<std::uint64_t>& seeds) {
  Json j;
  j["system"] = to_string(agg.system);
  j["fingerprint"] = agg.fingerprint;
  j["seeds"] = seeds;
  j["macro_f1_convention"] = kMacroF1Convention;
  Json metrics = Json::object();
  for (const auto& [name, s] : agg.metrics) {
    Json m;
    if (s.count > 0) {
      m["mean"] = s.mean;
      m["std"] = s.std;
    } else {
      m["mean"] = nullptr;
      m["std"] = nullptr;
    }
    m["count"] = s.count;
    metrics[name] = m;
  }
  j["metrics"] = metrics;
  j["disagreement_corr_absent_reasons"] = agg.absent_reasons;
  j["trainable_params"] = agg.trainable_params;
  j["params_breakdown"] = breakdown_json(agg.params_breakdown);
  return j.dump(2) + "\n";
}

Aggregate parse_aggregate_report(const std::string& text) {
  const Json j = Json::parse(text);
  Aggregate agg;
  agg.system = parse_system(j.at("system").get<std::string>());
  agg.fingerprint = j.at("fingerprint").get<std::string>();
  for (const auto& [name, m] : j.at("metrics").items()) {
    MetricSummary s;
    s.count = m.at("count").get<std::size_t>();
    if (s.count > 0) {
      s.mean = m.at("mean").get<double>();
      s.std = m.at("std").get<double>();
    }
    agg.metrics.emplace_back(name, s);
  }
  agg.absent_reasons = j.at("disagreement_corr_absent_reasons").get<std::vector<std::string>>();
  agg.trainable_params = j.at("trainable_params").get<std::uint64_t>();
  for (const auto& [name, n] : j.at("params_breakdown").items()) agg.params_breakdown.add(name, n.get<std::uint64_t>());
  return agg;
}

std::string grid_report_json(const GridResult& grid) {
  Json j;
  Json cells = Json::array();
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    const auto& c = grid.cells[k];
    Json cell;
    cell["dropout_p"] = c.dropout_p;
    cell["learning_rate"] = c.learning_rate;
    cell["dev_micro_f1"] = c.dev_micro_f1;
    cell["selected"] = k == grid.selected;
    cells.push_back(cell);
  }
  j["cells"] = cells;
  const auto& sel = grid.cells.at(grid.selected);
  j["selected"] = {{"dropout_p", sel.dropout_p}, {"learning_rate", sel.learning_rate},
                   {"dev_micro_f1", sel.dev_micro_f1}};
  j["selection_rule"] = "max dev micro-F1; ties to lower learning rate, then higher dropout";
  if (!grid.cells.empty()) {
    j["fingerprint"] = sel.result.fingerprint;
    j["config"] = config_json(sel.result.config);
  }
  return j.dump(2) + "\n";
}

std::string render_comparison_table(const std::vector<Aggregate>& systems) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"metric"};
  for (const auto& s : systems) header.push_back(to_string(s.system));
  rows.push_back(header);
  const std::pair<const char*, const char*> metrics[] = {{"annotator_f1", "Annotator F1"},
                                                         {"global_f1", "Global F1"},
                                                         {"global_accuracy", "Global Acc."},
                                                         {"disagreement_corr", "Disagreement Corr."}};
  for (const auto& [key, label] : metrics) {
    std::vector<std::string> row{label};
    for (const auto& s : systems) {
      const MetricSummary* m = s.find(key);
      if (!m || m->count == 0) {
        row.push_back("NA");
      } else {
        const double scale = std::string(key) == "disagreement_corr" ? 1.0 : 100.0;
        const int digits = scale == 1.0 ? 3 : 1;
        row.push_back(fixed(m->mean * scale, digits) + " ± " + fixed(m->std * scale, digits));
      }
    }
    rows.push_back(row);
  }
  std::vector<std::string> params{"Trainable params"};
  for (const auto& s : systems) params.push_back(sci(s.trainable_params));
  rows.push_back(params);
  return render(rows);
}

std::string render_grid_table(const GridResult& grid) {
  std::vector<double> lrs, dropouts;
  for (const auto& c : grid.cells) {
    if (std::find(lrs.begin(), lrs.end(), c.learning_rate) == lrs.end()) lrs.push_back(c.learning_rate);
    if (std::find(dropouts.begin(), dropouts.end(), c.dropout_p) == dropouts.end()) dropouts.push_back(c.dropout_p);
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"dropout \\ lr"};
  for (double lr : lrs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", lr);
    header.emplace_back(buf);
  }
  rows.push_back(header);
  for (double p : dropouts) {
    std::vector<std::string> row{fixed(p, 2)};
    for (double lr : lrs) {
      std::string cell = "-";
      for (std::size_t k = 0; k < grid.cells.size(); ++k) {
        const auto& c = grid.cells[k];
        if (c.dropout_p == p && c.learning_rate == lr) {
          cell = fixed(c.dev_micro_f1 * 100.0, 2) + (k == grid.selected ? " *" : "");
        }
      }
      row.push_back(cell);
    }
    rows.push_back(row);
  }
  return render(rows) + "(dev micro-F1 x 100; * = selected cell)\n";
}

std::string render_param_counts(const ParamBreakdown& counts, const std::string& title) {
  std::vector<std::vector<std::string>> rows{{title, "parameters"}};
  for (const auto& [name, n] : counts.items) rows.push_back({name, std::to_string(n)});
  rows.push_back({"total", std::to_string(counts.total()) + " (" + sci(counts.total()) + ")"});
  return render(rows);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hyperpersona
