// SPDX-License-Identifier: Apache-2.0
#include "srppo/run_directory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "srppo/errors.hpp"

namespace srppo {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::ofstream open_output(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write '" + p.string() + "'");
  return out;
}

void write_json_file(const fs::path& p, const ordered_json& j) { open_output(p) << j.dump(2) << '\n'; }

template <class F>
void write_with(const fs::path& p, F&& f) {
  auto out = open_output(p);
  f(out);
  if (!out) throw InputError("failed writing '" + p.string() + "'");
}

void save_value_head(const fs::path& p, const ValueHead& head) {
  write_with(p, [&](std::ostream& o) { write_checkpoint(o, head); });
}

void save_policy(const fs::path& p, const Policy& policy) {
  write_with(p, [&](std::ostream& o) { write_checkpoint(o, policy); });
}

void write_stage(const fs::path& dir, const std::string& stage, const PipelineState& s) {
  if (stage == "data") {
    write_with(dir / "data/sft_demos.jsonl", [&](std::ostream& o) { write_demonstrations(o, s.sft_demos); });
    write_with(dir / "data/heldout_demos.jsonl", [&](std::ostream& o) { write_demonstrations(o, s.heldout_demos); });
    write_with(dir / "data/ppo_prompts.jsonl", [&](std::ostream& o) { write_prompts(o, s.ppo_prompts); });
    write_with(dir / "data/seen_prompts.jsonl", [&](std::ostream& o) { write_prompts(o, s.seen_prompts); });
    write_with(dir / "data/unseen_prompts.jsonl", [&](std::ostream& o) { write_prompts(o, s.unseen_prompts); });
  } else if (stage == "pretrain") {
    save_policy(dir / "pretrain/policy.ckpt", *s.pretrained);
    write_with(dir / "pretrain/log.jsonl", [&](std::ostream& o) { write_sft_log(o, s.pretrain_log); });
  } else if (stage == "sft") {
    save_policy(dir / "sft/policy.ckpt", *s.sft);
    write_with(dir / "sft/log.jsonl", [&](std::ostream& o) { write_sft_log(o, s.sft_log); });
  } else if (stage == "sft_extended") {
    save_policy(dir / "sft_extended/policy.ckpt", *s.sft_extended);
    write_with(dir / "sft_extended/log.jsonl", [&](std::ostream& o) { write_sft_log(o, s.sft_extended_log); });
  } else if (stage == "ppo") {
    save_policy(dir / "ppo/actor.ckpt", *s.srppo);
    save_value_head(dir / "ppo/critic.ckpt", *s.critic);
    write_with(dir / "ppo/metrics.jsonl", [&](std::ostream& o) { write_ppo_metrics(o, s.ppo_log); });
  } else if (stage == "baseline") {
    save_policy(dir / "baseline/actor.ckpt", *s.baseline);
    write_with(dir / "baseline/metrics.jsonl", [&](std::ostream& o) { write_ppo_metrics(o, s.baseline_log); });
  } else if (stage == "length_study") {
    write_with(dir / "length_study/token_wise.jsonl",
               [&](std::ostream& o) { write_ppo_metrics(o, s.length_token_wise_log); });
    write_with(dir / "length_study/sequence_at_eos.jsonl",
               [&](std::ostream& o) { write_ppo_metrics(o, s.length_sequence_log); });
  } else if (stage == "eval") {
    write_with(dir / "eval/report.jsonl", [&](std::ostream& o) { write_eval_reports(o, s.reports); });
    write_with(dir / "eval/summary.csv", [&](std::ostream& o) { write_summary_csv(o, s.reports); });
  }
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const InputError*>(&e)) return "InputError";
  if (dynamic_cast<const OracleUnavailable*>(&e)) return "OracleUnavailable";
  if (dynamic_cast<const TrainingError*>(&e)) return "TrainingError";
  if (dynamic_cast<const NonFiniteReward*>(&e)) return "NonFiniteReward";
  if (dynamic_cast<const InvariantViolation*>(&e)) return "InvariantViolation";
  return "Error";
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw InputError(p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
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

// Numeric metric columns of a record stream, in first-seen order.
std::vector<std::string> metric_keys(const std::vector<json>& records, const std::set<std::string>& skip) {
  std::vector<std::string> keys;
  std::set<std::string> seen;
  auto visit = [&](const std::string& k, const json& v) {
    if (skip.count(k) || !v.is_number() || !seen.insert(k).second) return;
    keys.push_back(k);
  };
  for (const auto& r : records) {
    for (const auto& [k, v] : r.items()) {
      if (k == "extra" && v.is_object()) {
        for (const auto& [ek, ev] : v.items()) visit(ek, ev);
      } else {
        visit(k, v);
      }
    }
  }
  return keys;
}

std::optional<double> metric_value(const json& r, const std::string& key) {
  auto it = r.find(key);
  if (it != r.end() && it->is_number()) return it->get<double>();
  auto ex = r.find("extra");
  if (ex != r.end() && ex->is_object()) {
    auto e = ex->find(key);
    if (e != ex->end() && e->is_number()) return e->get<double>();
  }
  return std::nullopt;
}

Series series_for(const std::string& name, const std::vector<json>& records, const std::string& key) {
  Series s;
  s.name = name;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (auto v = metric_value(records[i], key); v && std::isfinite(*v)) {
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(*v);
    }
  }
  return s;
}

struct LogSource {
  std::string stage;
  std::vector<std::pair<std::string, fs::path>> files;  // series name, path
};

const std::vector<LogSource>& log_sources() {
  static const std::vector<LogSource> sources = {
      {"pretrain", {{"pretrain", "pretrain/log.jsonl"}}},
      {"sft", {{"sft", "sft/log.jsonl"}}},
      {"sft_extended", {{"sft_extended", "sft_extended/log.jsonl"}}},
      {"ppo", {{"ppo", "ppo/metrics.jsonl"}}},
      {"baseline", {{"baseline", "baseline/metrics.jsonl"}}},
      {"length_study",
       {{"token_wise", "length_study/token_wise.jsonl"}, {"sequence_at_eos", "length_study/sequence_at_eos.jsonl"}}},
      {"eval", {{"eval", "eval/report.jsonl"}}},
  };
  return sources;
}

const std::vector<std::string>& compare_columns() {
  static const std::vector<std::string> cols = {"kl_to_expert", "kl_seen",          "kl_unseen",
                                                "heldout_nll",  "mean_response_length", "task_success_rate"};
  return cols;
}

std::optional<double> report_metric(const json& r, const std::string& col) {
  auto it = r.find(col);
  if (it == r.end() || it->is_null()) return std::nullopt;
  if (it->is_object()) {
    auto v = it->find("value");
    if (v == it->end() || !v->is_number()) return std::nullopt;
    return v->get<double>();
  }
  if (it->is_number()) return it->get<double>();
  return std::nullopt;
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

void diff_json(const json& a, const json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys) {
      const std::string p = path.empty() ? k : path + "." + k;
      if (!a.contains(k)) {
        out.push_back(p + ": missing vs " + b[k].dump());
      } else if (!b.contains(k)) {
        out.push_back(p + ": " + a[k].dump() + " vs missing");
      } else {
        diff_json(a[k], b[k], p, out);
      }
    }
  } else if (a != b) {
    out.push_back(path + ": " + a.dump() + " vs " + b.dump());
  }
}

}  // namespace

ExperimentConfig load_config(const fs::path& path, const RunOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = config_from_json(j);
  if (overrides.output_dir) c.output_dir = *overrides.output_dir;
  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.stages) c.stages = *overrides.stages;
  validate(c);
  return c;
}

fs::path run_experiment(const ExperimentConfig& config) {
  validate(config);
  const fs::path dir = config.output_dir;
  if (fs::exists(dir / "manifest.json") || fs::exists(dir / "config.json"))
    throw ConfigError("output_dir: '" + dir.string() + "' already holds a run");
  fs::create_directories(dir);
  write_json_file(dir / "config.json", to_json(config));

  std::vector<std::string> completed;
  auto manifest = [&](const std::string& status) {
    ordered_json m;
    m["status"] = status;
    m["stages"] = config.stages;
    m["completed"] = completed;
    write_json_file(dir / "manifest.json", m);
  };
  manifest("running");

  try {
    run_pipeline(config, [&](const std::string& stage, const PipelineState& s) {
      write_stage(dir, stage, s);
      completed.push_back(stage);
      manifest("running");
    });
  } catch (const std::exception& e) {
    std::string failed = "data";
    if (!completed.empty()) {
      failed = "unknown";
      for (const auto& st : known_stages()) {
        const bool chosen = std::find(config.stages.begin(), config.stages.end(), st) != config.stages.end();
        const bool done = std::find(completed.begin(), completed.end(), st) != completed.end();
        if (chosen && !done) {
          failed = st;
          break;
        }
      }
    }
    ordered_json f;
    f["stage"] = failed;
    f["error"] = error_kind(e);
    f["message"] = e.what();
    if (const auto* te = dynamic_cast<const TrainingError*>(&e)) f["step"] = te->step();
    f["completed"] = completed;
    write_json_file(dir / "failure.json", f);
    manifest("failed");
    throw;
  }
  manifest("complete");
  return dir;
}

void write_svg_plot(std::ostream& out, const std::string& title, const std::string& x_label,
                    const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) {
    const double pad = std::max(1e-9, std::abs(ymin) * 0.05);
    ymin -= pad;
    ymax += pad;
  }
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
      << W << ' ' << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    out << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - B + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << num(xv) << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << num(py(yv) + 3)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(yv) << "</text>\n";
  }
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(x_label)
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    out << "\"/>\n";
    out << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">"
        << xml_escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

ReportOutput generate_report(const fs::path& run_dir) {
  std::vector<std::string> configured;
  if (fs::exists(run_dir / "config.json")) {
    const json c = read_json_file(run_dir / "config.json");
    if (c.contains("stages") && c["stages"].is_array())
      for (const auto& s : c["stages"]) configured.push_back(s.get<std::string>());
  }

  ReportOutput out;
  bool any = false;
  for (const auto& src : log_sources()) {
    bool present = true;
    for (const auto& [name, rel] : src.files) present = present && fs::exists(run_dir / rel);
    any = any || present;
    const bool wanted = std::find(configured.begin(), configured.end(), src.stage) != configured.end();
    if (!present && wanted) out.absent_stages.push_back(src.stage);
  }
  if (!any) {
    std::string expected = "config.json, manifest.json";
    for (const auto& src : log_sources())
      for (const auto& [name, rel] : src.files) expected += ", " + rel.string();
    throw InputError("report: no logs in '" + run_dir.string() + "'; expected files: " + expected);
  }

  const fs::path rdir = run_dir / "report";
  fs::create_directories(rdir);
  for (const auto& src : log_sources()) {
    bool present = true;
    for (const auto& [name, rel] : src.files) present = present && fs::exists(run_dir / rel);
    if (!present) continue;

    if (src.stage == "eval") {
      const auto records = read_jsonl(run_dir / src.files[0].second);
      const fs::path p = rdir / "summary.csv";
      write_with(p, [&](std::ostream& o) {
        o << "method";
        for (const auto& c : compare_columns()) o << ',' << c;
        o << '\n';
        for (const auto& r : records) {
          o << r.value("method", std::string{});
          for (const auto& c : compare_columns()) o << ',' << csv_cell(report_metric(r, c));
          o << '\n';
        }
      });
      out.files.push_back(p);
      continue;
    }

    std::vector<std::pair<std::string, std::vector<json>>> logs;
    for (const auto& [name, rel] : src.files) logs.emplace_back(name, read_jsonl(run_dir / rel));
    std::vector<std::string> keys;
    std::set<std::string> seen;
    for (const auto& [name, records] : logs)
      for (const auto& k : metric_keys(records, {"iter", "step", "epoch"}))
        if (seen.insert(k).second) keys.push_back(k);
    const bool sft_like = src.stage == "pretrain" || src.stage == "sft" || src.stage == "sft_extended";
    for (const auto& key : keys) {
      std::vector<Series> series;
      for (const auto& [name, records] : logs) series.push_back(series_for(name, records, key));
      const fs::path p = rdir / (src.stage + "_" + key + ".svg");
      write_with(p, [&](std::ostream& o) {
        write_svg_plot(o, src.stage + ": " + key, sft_like ? "log record" : "iteration (warmup included)", series);
      });
      out.files.push_back(p);
    }
  }

  const fs::path missing = rdir / "absent_stages.txt";
  if (!out.absent_stages.empty()) {
    write_with(missing, [&](std::ostream& o) {
      for (const auto& s : out.absent_stages) o << s << '\n';
    });
    out.files.push_back(missing);
  } else if (fs::exists(missing)) {
    fs::remove(missing);
  }
  return out;
}

CompareTable compare_runs(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.size() < 2) throw ConfigError("compare: needs at least two run directories");
  std::vector<json> worlds;
  for (const auto& d : run_dirs) {
    if (!fs::exists(d / "eval/report.jsonl")) throw InputError("compare: '" + d.string() + "' has no eval/report.jsonl");
    const json c = read_json_file(d / "config.json");
    worlds.push_back(json{{"world", c.value("world", json::object())}, {"world_seed", c.value("world_seed", json())}});
  }
  for (std::size_t i = 1; i < worlds.size(); ++i) {
    std::vector<std::string> diffs;
    diff_json(worlds[0], worlds[i], "", diffs);
    if (!diffs.empty()) {
      std::string msg = "compare: world of '" + run_dirs[i].string() + "' differs from '" + run_dirs[0].string() + "':";
      for (const auto& d : diffs) msg += "\n  " + d;
      throw ConfigError(msg);
    }
  }

  // Row labels use the directory name, or the full path when names collide.
  std::set<std::string> names;
  bool collide = false;
  for (const auto& d : run_dirs) collide = !names.insert(d.filename().string()).second || collide;

  CompareTable t;
  t.columns = compare_columns();
  for (const auto& d : run_dirs) {
    const std::string label = collide ? d.string() : d.filename().string();
    for (const auto& r : read_jsonl(d / "eval/report.jsonl")) {
      t.rows.push_back(label + "/" + r.value("method", std::string{}));
      std::vector<std::optional<double>> row;
      for (const auto& c : t.columns) row.push_back(report_metric(r, c));
      t.values.push_back(std::move(row));
    }
  }
  t.best.assign(t.rows.size(), std::vector<bool>(t.columns.size(), false));
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    const std::string& col = t.columns[c];
    if (col == "mean_response_length") continue;
    const bool higher = col == "task_success_rate";
    std::optional<double> best;
    for (const auto& row : t.values) {
      const auto& v = row[c];
      if (!v || !std::isfinite(*v)) continue;
      if (!best || (higher ? *v > *best : *v < *best)) best = *v;
    }
    if (!best) continue;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& v = t.values[r][c];
      t.best[r][c] = v && csv_cell(v) == csv_cell(best);
    }
  }
  return t;
}

void write_compare_csv(std::ostream& out, const CompareTable& t) {
  out << "method";
  for (const auto& c : t.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out << t.rows[r];
    for (std::size_t c = 0; c < t.columns.size(); ++c) out << ',' << csv_cell(t.values[r][c]) << (t.best[r][c] ? "*" : "");
    out << '\n';
  }
}

}  // namespace srppo
