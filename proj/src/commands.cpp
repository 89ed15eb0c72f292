#include "stiefel_lora/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>
#include <json.hpp>

#include "stiefel_lora/checkpoint.hpp"
#include "stiefel_lora/config.hpp"
#include "stiefel_lora/diagnostics.hpp"
#include "stiefel_lora/errors.hpp"
#include "stiefel_lora/harness.hpp"

namespace stiefel_lora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename Fn>
int guarded(const char* command, std::ostream& log, Fn&& fn) {
  try {
    fn();
    return kExitOk;
  } catch (const ConfigError& e) {
    log << command << ": config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    log << command << ": numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    log << command << ": error: " << e.what() << '\n';
    return kExitConfig;
  }
}

RunConfig load_with_seed(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig config = load_run_config(path);
  if (seed) config.seed = *seed;
  return config;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

double max_ortho_error(const std::vector<MetricsRecord>& timeline) {
  double worst = 0.0;
  for (const auto& r : timeline) worst = std::max(worst, r.ortho_error_b);
  return worst;
}

json record_json(const MetricsRecord& r) {
  return {{"layer", r.layer},           {"loss", r.loss},
          {"ortho_error_b", r.ortho_error_b}, {"eff_rank_b", r.eff_rank_b},
          {"eff_rank_a", r.eff_rank_a}, {"eff_rank_dw", r.eff_rank_dw},
          {"cos_mean", r.cos_mean},     {"cos_std", r.cos_std}};
}

json run_summary(const TrainResult& tr) {
  const MetricsRecord mean = final_layer_mean(tr.timeline);
  json layers = json::array();
  for (const auto& r : final_records(tr.timeline)) layers.push_back(record_json(r));
  return {{"optimizer", std::string(to_string(tr.optimizer))},
          {"final_step", mean.step},
          {"final_loss", tr.final_loss()},
          {"final_eff_rank_b", mean.eff_rank_b},
          {"final_eff_rank_a", mean.eff_rank_a},
          {"final_eff_rank_dw", mean.eff_rank_dw},
          {"final_cos_mean", mean.cos_mean},
          {"final_cos_std", mean.cos_std},
          {"max_ortho_error", max_ortho_error(tr.timeline)},
          {"layers", layers}};
}

std::vector<fs::path> checkpoint_dirs(const fs::path& root) {
  if (is_adapter_checkpoint(root.string())) return {root};
  if (!fs::is_directory(root)) throw FormatError("checkpoint directory not found: " + root.string());
  const std::regex layer_re("layer_([0-9]+)");
  std::vector<std::pair<unsigned long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(root)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && std::regex_match(name, m, layer_re)) {
      found.emplace_back(std::stoul(m[1].str()), entry.path());
    }
  }
  if (found.empty()) throw FormatError("no adapter checkpoint found under " + root.string());
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& f : found) out.push_back(f.second);
  return out;
}

}  // namespace

int run_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& log) {
  return guarded("train", log, [&] {
    const RunConfig config = load_with_seed(config_path, seed);
    const auto start = std::chrono::steady_clock::now();
    const TrainResult tr = train(config);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path out(out_dir);
    fs::create_directories(out);
    save_metrics_csv((out / "metrics.csv").string(), tr.timeline);
    for (std::size_t l = 0; l < tr.adapters.size(); ++l) {
      save_checkpoint((out / "checkpoint" / ("layer_" + std::to_string(l))).string(),
                      tr.adapters[l], {config.steps, tr.final_loss(), l});
    }
    json summary = run_summary(tr);
    summary["wall_time_s"] = wall;
    summary["config"] = to_json(config);
    write_json(out / "summary.json", summary);
    log << "train: " << config.steps << " steps, final loss " << format_double(tr.final_loss())
        << ", max ortho error " << format_double(max_ortho_error(tr.timeline)) << '\n';
  });
}

int run_compare(const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> seed, std::ostream& log) {
  return guarded("compare", log, [&] {
    const RunConfig config = load_with_seed(config_path, seed);
    const CompareResult cr = compare(config);

    const fs::path out(out_dir);
    fs::create_directories(out);
    save_metrics_csv((out / "metrics_stiefel.csv").string(), cr.stiefel.timeline);
    save_metrics_csv((out / "metrics_adamw.csv").string(), cr.adamw.timeline);

    const MetricsRecord s = final_layer_mean(cr.stiefel.timeline);
    const MetricsRecord a = final_layer_mean(cr.adamw.timeline);
    json doc = {
        {"stiefel", run_summary(cr.stiefel)},
        {"adamw", run_summary(cr.adamw)},
        {"gaps",
         {{"eff_rank_dw", s.eff_rank_dw - a.eff_rank_dw},
          {"cos_std", s.cos_std - a.cos_std},
          {"loss", cr.stiefel.final_loss() - cr.adamw.final_loss()}}},
        {"gap_convention", "stiefel minus adamw"},
        {"layer_aggregation",
         "final_* values and gaps are means over layers of per-layer final-step statistics; "
         "per-layer values are listed under layers"},
        {"config", to_json(config)},
    };
    write_json(out / "comparison.json", doc);
    log << "compare: eff_rank_dw stiefel " << format_double(s.eff_rank_dw) << " vs adamw "
        << format_double(a.eff_rank_dw) << '\n';
  });
}

int run_sweep_rank(const std::string& config_path, const std::string& out_dir,
                   std::optional<std::uint64_t> seed, std::ostream& log) {
  return guarded("sweep-rank", log, [&] {
    const RunConfig config = load_with_seed(config_path, seed);
    if (config.ranks.empty()) throw ConfigError("sweep-rank: config key 'ranks' is empty");
    const SweepResult sr = sweep_rank(config);

    const fs::path out(out_dir);
    fs::create_directories(out);
    {
      std::ofstream csv(out / "rank_sweep.csv", std::ios::binary);
      csv << "rank,optimizer,eff_rank_dw_mean\n";
      for (const auto& a : sr.aggregates) {
        csv << a.rank << ',' << to_string(a.optimizer) << ',' << format_double(a.eff_rank_dw_mean)
            << '\n';
      }
      if (!csv) throw Error("failed writing rank_sweep.csv");
    }
    {
      std::ofstream csv(out / "rank_sweep_runs.csv", std::ios::binary);
      csv << "rank,optimizer,seed,eff_rank_dw,final_loss\n";
      for (const auto& r : sr.runs) {
        csv << r.rank << ',' << to_string(r.optimizer) << ',' << r.seed << ','
            << format_double(r.eff_rank_dw) << ',' << format_double(r.final_loss) << '\n';
      }
      if (!csv) throw Error("failed writing rank_sweep_runs.csv");
    }
    for (const auto& a : sr.aggregates) {
      log << "sweep-rank: r=" << a.rank << ' ' << to_string(a.optimizer)
          << " mean eff_rank_dw " << format_double(a.eff_rank_dw_mean) << '\n';
    }
  });
}

int run_diagnose(const std::string& checkpoint_dir, const std::string& out_dir, std::ostream& log) {
  return guarded("diagnose", log, [&] {
    std::vector<Checkpoint> checkpoints;
    for (const auto& dir : checkpoint_dirs(fs::path(checkpoint_dir))) {
      checkpoints.push_back(load_checkpoint(dir.string()));
    }

    std::vector<MetricsRecord> records;
    std::vector<Matrix> cosines;
    for (const auto& cp : checkpoints) {
      records.push_back(snapshot(cp.adapter, cp.info.step, cp.info.loss, cp.info.layer));
      cosines.push_back(cosine_matrix(cp.adapter.b()));
    }

    const fs::path out(out_dir);
    fs::create_directories(out);
    save_metrics_csv((out / "metrics.csv").string(), records);
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
      const auto name = "cosine_matrix_layer" + std::to_string(checkpoints[i].info.layer) + ".txt";
      save_matrix((out / name).string(), cosines[i]);
    }
    log << "diagnose: " << checkpoints.size() << " adapter(s)\n";
  });
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Stiefel-constrained LoRA experiments on synthetic teacher-student tasks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto add_run_command = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    return sub;
  };
  CLI::App* train_cmd = add_run_command("train", "Train one adapter stack");
  CLI::App* compare_cmd = add_run_command("compare", "Stiefel vs AdamW on the same task");
  CLI::App* sweep_cmd = add_run_command("sweep-rank", "Effective rank of dW across ranks and seeds");

  CLI::App* diagnose_cmd = app.add_subcommand("diagnose", "Metrics of a saved checkpoint");
  auto* ckpt = diagnose_cmd->add_option("--config,--checkpoint", config_path,
                                        "Checkpoint directory (adapter or layer_<i> parent)");
  ckpt->required();
  diagnose_cmd->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*train_cmd) return run_train(config_path, out_dir, seed, std::cerr);
  if (*compare_cmd) return run_compare(config_path, out_dir, seed, std::cerr);
  if (*sweep_cmd) return run_sweep_rank(config_path, out_dir, seed, std::cerr);
  if (*diagnose_cmd) return run_diagnose(config_path, out_dir, std::cerr);
  return kExitConfig;
}

}  // namespace stiefel_lora
