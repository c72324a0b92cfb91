// Copyright 2026 The CARE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "care/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "care/dataset.hpp"
#include "care/evalharness.hpp"
#include "care/finetune.hpp"
#include "care/pretrain.hpp"

namespace care::cli {

namespace fs = std::filesystem;

void apply_overrides(io::json& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    }
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    io::json* node = &cfg;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (!node->is_object() || !node->contains(part)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("config key '" + key + "' is a section");
    io::json value = io::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    *node = value;
  }
}

namespace {

void flatten(const io::json& j, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else if (it->is_number_float()) {
      // Single-precision fields read back as doubles; print them short.
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.7g", it->get<double>());
      out.emplace_back(key, buf);
    } else {
      out.emplace_back(key, it->dump());
    }
  }
}

}  // namespace

std::string describe_schema(const io::json& defaults) {
  std::vector<std::pair<std::string, std::string>> rows;
  flatten(defaults, "", rows);
  std::sort(rows.begin(), rows.end());
  std::ostringstream os;
  for (const auto& [k, v] : rows) os << "  " << k << " = " << v << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

std::string run_name(const fs::path& dir) {
  fs::path p = dir;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::vector<io::json> read_ndjson(const fs::path& path) {
  std::vector<io::json> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    io::json j = io::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw InputError("malformed metrics log line in " + path.string());
    out.push_back(std::move(j));
  }
  return out;
}

double num_or_nan(const io::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

// Mean of the last `window` finite values of `key`.
std::optional<double> tail_mean(const std::vector<io::json>& log, const char* key, int window) {
  double sum = 0.0;
  int n = 0;
  for (auto it = log.rbegin(); it != log.rend() && n < window; ++it) {
    const double v = num_or_nan(*it, key);
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", *v);
  return buf;
}

struct RunData {
  std::string name;
  std::vector<io::json> log;
  io::json config;  // pretrain config when present
  std::vector<eval::MetricsReport> reports;
};

RunData collect(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("run directory not found: " + dir.string());
  RunData r;
  r.name = run_name(dir);
  if (fs::exists(dir / "metrics.ndjson")) r.log = read_ndjson(dir / "metrics.ndjson");
  if (fs::exists(dir / "config.json")) r.config = io::read_json(dir / "config.json");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    const io::json j = io::json::parse(io::read_text(f), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("metric_name") ||
        !j.contains("config_digest")) {
      continue;
    }
    eval::MetricsReport rep = eval::MetricsReport::from_json(j);
    std::string label = r.name;
    if (rep.details.contains("variant")) label += ":" + rep.details["variant"].get<std::string>();
    if (rep.details.value("shuffled_labels", false)) label += ":shuffled";
    rep.label = label;
    r.reports.push_back(std::move(rep));
  }
  return r;
}

const eval::MetricsReport* find_report(const RunData& r, const std::string& metric) {
  for (const auto& rep : r.reports) {
    if (rep.metric_name == metric && !rep.details.contains("variant")) return &rep;
  }
  return nullptr;
}

}  // namespace

ReportSummary build_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw InputError("report: no run directories given");
  std::vector<RunData> runs;
  for (const auto& d : run_dirs) runs.push_back(collect(d));
  bool any = false;
  for (const auto& r : runs) any = any || !r.log.empty() || !r.reports.empty();
  if (!any) throw InputError("report: run directories contain no metrics logs or reports");
  fs::create_directories(out);
  ReportSummary summary;

  for (const auto& r : runs) {
    if (r.log.empty()) continue;
    std::vector<eval::Series> series;
    for (const char* key : {"L", "L_f", "L_p", "L1"}) {
      eval::Series s{key, {}, {}};
      bool present = false;
      for (const auto& rec : r.log) {
        const double v = num_or_nan(rec, key);
        present = present || std::isfinite(v);
        s.x.push_back(num_or_nan(rec, "step"));
        s.y.push_back(v);
      }
      if (present) series.push_back(std::move(s));
    }
    io::write_text_atomic(out / ("loss_" + r.name + ".svg"),
                          eval::line_chart_svg("loss: " + r.name, series));
    ++summary.loss_curves;
  }

  std::map<std::string, std::vector<eval::MetricsReport>> by_metric;
  for (const auto& r : runs) {
    for (const auto& rep : r.reports) by_metric[rep.metric_name].push_back(rep);
  }
  for (const auto& [metric, reps] : by_metric) {
    if (reps.size() < 2) continue;
    eval::compare_runs(reps, out / ("compare_" + metric + ".csv"),
                       out / ("compare_" + metric + ".svg"));
    ++summary.comparisons;
  }

  // Success rates with binomial standard errors, one row per run.
  std::ostringstream t1;
  t1 << "name,success_rate,std_error,n\n";
  for (const auto& r : runs) {
    for (const auto& rep : r.reports) {
      if (rep.metric_name != "rollout_success") continue;
      t1 << rep.label << ',' << cell(rep.value) << ',' << cell(rep.std_error) << ','
         << rep.n_samples << '\n';
      summary.table1 = true;
    }
  }
  if (summary.table1) io::write_text_atomic(out / "table1_success.csv", t1.str());

  // Objective ablation: one row per pretraining run.
  std::ostringstream t4;
  t4 << "name,objective,zero_frame_context,L_f,L_p,lp_mse,spcfc,success_rate,std_error\n";
  for (const auto& r : runs) {
    if (!r.config.is_object() || !r.config.contains("objective")) continue;
    auto metric = [&](const char* m) -> std::optional<double> {
      const eval::MetricsReport* rep = find_report(r, m);
      return rep ? std::optional<double>(rep->value) : std::nullopt;
    };
    const eval::MetricsReport* sr = find_report(r, "rollout_success");
    t4 << r.name << ',' << r.config["objective"].get<std::string>() << ','
       << (r.config.value("zero_frame_context", false) ? "true" : "false") << ','
       << cell(tail_mean(r.log, "L_f", 100)) << ',' << cell(tail_mean(r.log, "L_p", 100)) << ','
       << cell(metric("lp_mse")) << ',' << cell(metric("spcfc")) << ','
       << cell(sr ? std::optional<double>(sr->value) : std::nullopt) << ','
       << cell(sr ? sr->std_error : std::nullopt) << '\n';
    summary.table4 = true;
  }
  if (summary.table4) io::write_text_atomic(out / "table4_objectives.csv", t4.str());
  return summary;
}

// ---------------------------------------------------------------------------

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c, const io::json& defaults, bool needs_out) {
  sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  auto* o = sub->add_option("--out", c.out, "output directory");
  if (needs_out) o->required();
  sub->add_option("--seed", c.seed, "overrides the config seed");
  sub->add_option("--set", c.sets, "key=value override (repeatable)");
  sub->footer("Config keys (defaults):\n" + describe_schema(defaults));
}

template <typename Config>
Config load_config(const Common& c) {
  const io::json base = c.config.empty() ? io::json::object() : io::read_json(c.config);
  io::json full = Config::from_json(base).to_json();
  if (c.seed) full["seed"] = *c.seed;
  apply_overrides(full, c.sets);
  return Config::from_json(full);
}

std::string resolve_data_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("CARE_DATA_ROOT"); env && *env) return env;
  throw ConfigError("no dataset root: set data_root or CARE_DATA_ROOT");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string canonical_metric(const std::string& m) {
  if (m == "lpmse" || m == "lp_mse") return "lp_mse";
  if (m == "spcfc" || m == "s_pcfc") return "spcfc";
  if (m == "semantic" || m == "semantic_accuracy") return "semantic";
  if (m == "semantic_chance") return "semantic_chance";
  if (m == "rollout" || m == "rollout_success" || m == "sr") return "rollout";
  throw ConfigError("unknown metric '" + m +
                    "' (expected lpmse, spcfc, semantic, semantic_chance, rollout)");
}

int run_eval(const Common& c, const std::string& metrics, std::ostream& out) {
  eval::EvalConfig cfg = load_config<eval::EvalConfig>(c);
  std::vector<std::string> wanted;
  for (const auto& m : split_csv(metrics)) wanted.push_back(canonical_metric(m));
  if (wanted.empty()) throw ConfigError("--metrics lists no metrics");
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs checkpoint (--set checkpoint=...)");
  const bool needs_data = std::any_of(wanted.begin(), wanted.end(),
                                      [](const std::string& m) { return m != "rollout"; });
  if (needs_data) cfg.data_root = resolve_data_root(cfg.data_root);
  const Model model = load_checkpoint(cfg.checkpoint).model;
  std::optional<data::Dataset> ds;
  if (needs_data) ds = data::Dataset::open(cfg.data_root);
  fs::create_directories(c.out);
  for (const std::string& m : wanted) {
    eval::MetricsReport rep;
    std::string file = m;
    if (m == "lp_mse") {
      rep = eval::evaluate_lp_mse(model, *ds, cfg);
    } else if (m == "spcfc") {
      rep = eval::evaluate_spcfc(model, *ds, cfg);
    } else if (m == "semantic" || m == "semantic_chance") {
      const auto variant = eval::parse_variant(cfg.semantic_variant);
      rep = eval::evaluate_semantic(model, *ds, cfg, variant, m == "semantic_chance");
      file = m + "_" + eval::variant_name(variant);
    } else {
      rep = eval::evaluate_rollout(model, cfg);
    }
    io::write_json_atomic(fs::path(c.out) / (file + ".json"), rep.to_json());
    out << file << ": " << rep.value << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CARE latent-action pretraining toolkit"};
  app.require_subcommand(1);
  Common gen_c, pre_c, ft_c, eval_c;
  std::string metrics = "lpmse";
  std::vector<std::string> report_runs;
  std::string report_out;

  auto* gen = app.add_subcommand("gen", "generate a synthetic trajectory dataset");
  add_common(gen, gen_c, data::GenConfig{}.to_json(), true);
  auto* pre = app.add_subcommand("pretrain", "unsupervised latent-action pretraining");
  add_common(pre, pre_c, pretrain::PretrainConfig{}.to_json(), true);
  auto* ft = app.add_subcommand("finetune", "adapter and action-head fine-tuning");
  add_common(ft, ft_c, finetune::FinetuneConfig{}.to_json(), true);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_c, eval::EvalConfig{}.to_json(), true);
  ev->add_option("--metrics", metrics,
                 "comma list of lpmse, spcfc, semantic, semantic_chance, rollout");
  auto* rep = app.add_subcommand("report", "tables and plots from run directories");
  rep->add_option("runs", report_runs, "run directories")->required();
  rep->add_option("--out", report_out, "artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    if (gen->parsed()) {
      const data::GenConfig cfg = load_config<data::GenConfig>(gen_c);
      const data::DatasetManifest m = data::generate_dataset(cfg, gen_c.out);
      out << "generated " << m.n_trajectories << " trajectories in " << gen_c.out << "\n";
    } else if (pre->parsed()) {
      pretrain::PretrainConfig cfg = load_config<pretrain::PretrainConfig>(pre_c);
      cfg.validate();
      const std::string root = resolve_data_root(cfg.data_root);
      const fs::path final_dir = pretrain::run_pretraining(cfg, root, pre_c.out, {});
      out << "checkpoint " << final_dir.string() << "\n";
    } else if (ft->parsed()) {
      finetune::FinetuneConfig cfg = load_config<finetune::FinetuneConfig>(ft_c);
      cfg.validate();
      const std::string root = resolve_data_root(cfg.data_root);
      const finetune::FinetuneResult r = finetune::run_finetune(cfg, root, ft_c.out);
      out << "checkpoint " << r.checkpoint.string() << " val_l1 " << r.val_l1_start << " -> "
          << r.val_l1_end << "\n";
    } else if (ev->parsed()) {
      return run_eval(eval_c, metrics, out);
    } else if (rep->parsed()) {
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      const ReportSummary s = build_report(dirs, report_out);
      out << "report: " << s.loss_curves << " loss curves, " << s.comparisons
          << " comparisons\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace care::cli
