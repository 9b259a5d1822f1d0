#include "harpo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace harpo::cli {
namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config file not found: " + path);
  }
  nlohmann::json j;
  in >> j;
  return j;
}

std::uint64_t parse_seed(const std::string& text) {
  std::size_t pos = 0;
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || text.empty()) {
    throw std::invalid_argument("HARPO_LAB_SEED is not an unsigned integer: " + text);
  }
  return seed;
}

nlohmann::json config_json_with_overrides(const std::string& config_path,
                                          const std::vector<std::string>& overrides) {
  nlohmann::json j = read_json_file(config_path);
  if (const char* env = std::getenv("HARPO_LAB_SEED")) {
    j["seed"] = parse_seed(env);
  }
  for (const std::string& o : overrides) {
    apply_override(j, o);
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string summary_table(const trainer::TrainResult& result) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "task" << "final_reward\n";
  for (const auto& [task_id, reward] : result.final_oracle) {
    os << std::left << std::setw(24) << task_id << std::setprecision(6) << std::fixed << reward
       << "\n";
  }
  os.unsetf(std::ios::fixed);
  os << "# best_step=" << result.best_step << " stopped_at=" << result.stopped_at_step
     << " early_stopped=" << (result.early_stopped ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace

RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  return run_config_from_json(config_json_with_overrides(config_path, overrides));
}

trainer::TrainResult run_one(const RunConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.jsonl");
  std::ofstream validation(dir / "validation.jsonl");
  std::ofstream advantages(dir / "advantages.jsonl");
  const std::string run_id = config.effective_run_id();
  const std::string variant = adv::to_string(config.estimator);

  trainer::TrainHooks hooks;
  hooks.on_step = [&](const trainer::StepMetrics& m) {
    metrics << trainer::metrics_record(m, run_id, variant, config.seed).dump() << "\n";
    metrics.flush();
  };
  hooks.on_validation = [&](const trainer::ValidationPoint& vp) {
    nlohmann::json j = {{"step", vp.step},
                        {"mean", vp.mean},
                        {"improved", vp.improved},
                        {"per_task", vp.per_task}};
    validation << j.dump() << "\n";
    validation.flush();
  };
  hooks.on_checkpoint = [&](const trainer::Checkpoint& ck, bool is_best) {
    const std::string payload = trainer::to_json(ck).dump() + "\n";
    write_text(dir / "checkpoint.json", payload);
    if (is_best) write_text(dir / "best_checkpoint.json", payload);
  };
  hooks.on_advantages = [&](const std::vector<trainer::AdvantageDumpRow>& rows) {
    for (const auto& r : rows) {
      nlohmann::json j = {{"step", r.step},
                          {"task", r.task_id},
                          {"sample", r.sample_id},
                          {"normalized", r.normalized},
                          {"modulated", r.modulated}};
      advantages << j.dump() << "\n";
    }
    advantages.flush();
  };

  trainer::TrainResult result = trainer::train(config, hooks);
  write_text(dir / "summary.txt", summary_table(result));
  return result;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = load_config(config_path, overrides);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }
  try {
    trainer::TrainResult result = run_one(config, out_dir);
    out << summary_table(result);
    return kExitOk;
  } catch (const trainer::TrainAbort& e) {
    err << "run aborted: " << e.what() << " (partial metrics kept in " << out_dir << ")\n";
    return kExitRuntimeAbort;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "run aborted: " << e.what() << "\n";
    return kExitRuntimeAbort;
  }
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<double> ranks(values.size(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    int better = 0;
    int equal = 0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (j == i) continue;
      if (values[j] > values[i]) better += 1;
      if (values[j] == values[i]) equal += 1;
    }
    ranks[i] = 1.0 + better + equal / 2.0;
  }
  return ranks;
}

namespace {

int run_variants(const std::string& config_path, const std::string& out_dir,
                 const std::vector<std::string>& variants,
                 const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err,
                 std::vector<trainer::TrainResult>* results_out) {
  std::vector<RunConfig> configs;
  try {
    for (const std::string& v : variants) {
      nlohmann::json j = config_json_with_overrides(config_path, overrides);
      j["estimator"] = v;
      j["run_id"] = "";  // derive per-variant ids even when the file pins one
      configs.push_back(run_config_from_json(j));
    }
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }
  try {
    for (std::size_t i = 0; i < configs.size(); ++i) {
      const fs::path sub = fs::path(out_dir) / variants[i];
      out << "running " << configs[i].effective_run_id() << "\n";
      results_out->push_back(run_one(configs[i], sub.string()));
    }
    return kExitOk;
  } catch (const trainer::TrainAbort& e) {
    err << "run aborted: " << e.what() << "\n";
    return kExitRuntimeAbort;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "run aborted: " << e.what() << "\n";
    return kExitRuntimeAbort;
  }
}

}  // namespace

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> variants = {"harpo", "no_structured", "no_sample_level",
                                            "no_inertial"};
  std::vector<trainer::TrainResult> results;
  const int status = run_variants(config_path, out_dir, variants, overrides, out, err, &results);
  if (status != kExitOk) return status;

  // Rank table over per-task final rewards, Table-style: rank within each
  // task, ties averaged, then the cross-task mean rank per variant.
  std::vector<std::string> tasks;
  for (const auto& [task_id, reward] : results.front().final_oracle) tasks.push_back(task_id);
  std::vector<std::vector<double>> rank_by_variant(variants.size());
  for (const std::string& task_id : tasks) {
    std::vector<double> values;
    for (const auto& r : results) values.push_back(r.final_oracle.at(task_id));
    const std::vector<double> ranks = average_ranks(values);
    for (std::size_t v = 0; v < variants.size(); ++v) rank_by_variant[v].push_back(ranks[v]);
  }
  std::ostringstream table;
  table << std::left << std::setw(18) << "variant";
  for (const std::string& t : tasks) table << std::setw(16) << t;
  table << "mean_rank\n";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    table << std::left << std::setw(18) << variants[v];
    double sum = 0.0;
    for (double r : rank_by_variant[v]) {
      table << std::setw(16) << r;
      sum += r;
    }
    table << sum / rank_by_variant[v].size() << "\n";
  }
  write_text(fs::path(out_dir) / "rank_table.txt", table.str());
  out << table.str();
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& out_dir,
                const std::vector<std::string>& variants,
                const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
  std::vector<std::string> use = variants;
  if (use.empty()) use = {"harpo", "grpo"};
  std::vector<trainer::TrainResult> results;
  const int status = run_variants(config_path, out_dir, use, overrides, out, err, &results);
  if (status != kExitOk) return status;

  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t v = 0; v < use.size(); ++v) {
    const trainer::TrainResult& r = results[v];
    double min_final = std::numeric_limits<double>::infinity();
    for (const auto& [task_id, reward] : r.final_oracle) min_final = std::min(min_final, reward);
    std::vector<double> geomean_trace;
    std::vector<double> dispersion_trace;
    for (const trainer::StepMetrics& m : r.history) {
      geomean_trace.push_back(m.s_task_geomean);
      std::vector<double> per_task;
      for (const auto& [task_id, tm] : m.tasks) per_task.push_back(tm.mean_abs_mod_adv);
      const double mean =
          std::accumulate(per_task.begin(), per_task.end(), 0.0) / per_task.size();
      double acc = 0.0;
      for (double x : per_task) acc += (x - mean) * (x - mean);
      dispersion_trace.push_back(std::sqrt(acc / per_task.size()));
    }
    summary.push_back({{"variant", use[v]},
                       {"min_final_task_reward", min_final},
                       {"steps", r.stopped_at_step},
                       {"factor_geomean_trace", geomean_trace},
                       {"mod_adv_dispersion_trace", dispersion_trace}});
  }
  write_text(fs::path(out_dir) / "comparison.json", summary.dump(2) + "\n");
  out << "comparison written to " << (fs::path(out_dir) / "comparison.json").string() << "\n";
  return kExitOk;
}

namespace {

struct RunData {
  std::string run_id;
  fs::path dir;
  std::vector<nlohmann::json> metrics;
};

std::vector<RunData> load_runs(const std::string& runs_dir) {
  std::vector<RunData> runs;
  if (!fs::exists(runs_dir)) return runs;
  std::vector<fs::path> candidates{runs_dir};
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir)) {
    if (entry.is_directory()) candidates.push_back(entry.path());
  }
  std::sort(candidates.begin(), candidates.end());
  for (const fs::path& dir : candidates) {
    std::ifstream in(dir / "metrics.jsonl");
    if (!in) continue;
    RunData run;
    run.dir = dir;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      run.metrics.push_back(nlohmann::json::parse(line));
    }
    if (run.metrics.empty()) continue;
    run.run_id = run.metrics.front().value("run_id", dir.filename().string());
    runs.push_back(std::move(run));
  }
  return runs;
}

void emit_series_csv(std::ostream& file, const std::vector<RunData>& runs,
                     const std::string& key_suffix, const std::string& scalar_key) {
  file << "step,series,value\n";
  for (const RunData& run : runs) {
    for (const nlohmann::json& rec : run.metrics) {
      const std::int64_t step = rec.at("step").get<std::int64_t>();
      if (!scalar_key.empty() && rec.contains(scalar_key)) {
        file << step << "," << run.run_id << "," << rec.at(scalar_key).get<double>() << "\n";
      }
      for (const auto& [key, value] : rec.items()) {
        if (key.rfind("task/", 0) == 0 && key.size() > key_suffix.size() &&
            key.compare(key.size() - key_suffix.size(), key_suffix.size(), key_suffix) == 0) {
          const std::string task =
              key.substr(5, key.size() - 5 - key_suffix.size());
          file << step << "," << run.run_id << "/" << task << "," << value.get<double>() << "\n";
        }
      }
    }
  }
}

}  // namespace

int cmd_report(const std::string& runs_dir, const std::string& figure, std::ostream& out,
               std::ostream& err) {
  const std::vector<std::string> known = {"relative_advantage", "factor_geomean",
                                          "advantage_hist"};
  if (std::find(known.begin(), known.end(), figure) == known.end()) {
    err << "unknown figure '" << figure << "'; available:";
    for (const std::string& k : known) err << " " << k;
    err << "\n";
    return kExitConfigError;
  }
  const std::vector<RunData> runs = load_runs(runs_dir);
  if (runs.empty()) {
    err << "no completed runs under " << runs_dir
        << " (expected run directories containing metrics.jsonl)\n";
    return kExitConfigError;
  }
  const fs::path out_path = fs::path(runs_dir) / ("figure_" + figure + ".csv");
  std::ofstream file(out_path);
  if (!file) {
    err << "cannot write " << out_path.string() << "\n";
    return kExitRuntimeAbort;
  }

  if (figure == "relative_advantage") {
    emit_series_csv(file, runs, "/rel_adv", "");
  } else if (figure == "factor_geomean") {
    emit_series_csv(file, runs, "/s_task", "factor/task_geomean");
  } else {
    // Histogram of modulated advantages from each run's last dump step.
    file << "series,bin_left,bin_right,count\n";
    bool any = false;
    for (const RunData& run : runs) {
      std::ifstream adv_in(run.dir / "advantages.jsonl");
      if (!adv_in) continue;
      std::map<std::int64_t, std::vector<double>> by_step;
      std::string line;
      while (std::getline(adv_in, line)) {
        if (line.empty()) continue;
        const nlohmann::json rec = nlohmann::json::parse(line);
        by_step[rec.at("step").get<std::int64_t>()].push_back(
            rec.at("modulated").get<double>());
      }
      if (by_step.empty()) continue;
      any = true;
      const std::vector<double>& values = by_step.rbegin()->second;
      const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
      double lo = *lo_it;
      double hi = *hi_it;
      if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
      }
      constexpr int kBins = 30;
      std::vector<long> counts(kBins, 0);
      for (double v : values) {
        int b = static_cast<int>((v - lo) / (hi - lo) * kBins);
        counts[std::clamp(b, 0, kBins - 1)] += 1;
      }
      for (int b = 0; b < kBins; ++b) {
        const double left = lo + (hi - lo) * b / kBins;
        const double right = lo + (hi - lo) * (b + 1) / kBins;
        file << run.run_id << "," << left << "," << right << "," << counts[b] << "\n";
      }
    }
    if (!any) {
      err << "no advantage dumps found under " << runs_dir << "\n";
      return kExitConfigError;
    }
  }
  out << "wrote " << out_path.string() << "\n";
  return kExitOk;
}

}  // namespace harpo::cli
