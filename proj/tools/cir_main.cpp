// Command-line front end: data generation, training, evaluation, mask
// inspection, and ablation sweeps over the synthetic retrieval world.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cir/data.hpp"
#include "cir/eval.hpp"
#include "cir/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint;
  std::optional<uint64_t> seed;
};

std::string resolve_out_dir(const std::string& out, const std::string& subcommand) {
  if (!out.empty()) return out;
  if (const char* root = std::getenv("CIR_OUT_ROOT")) {
    return (fs::path(root) / subcommand).string();
  }
  throw cir::ConfigError("no output directory: pass --out or set CIR_OUT_ROOT");
}

cir::ExperimentConfig resolve_config(const CommonArgs& args, bool require_file) {
  cir::ExperimentConfig cfg;
  if (!args.config_path.empty()) {
    cfg = cir::ExperimentConfig::load_file(args.config_path);
  } else if (require_file) {
    throw cir::ConfigError("--config is required for this subcommand");
  }
  for (const std::string& o : args.overrides) cfg.apply_override(o);
  if (args.seed) cfg.train.seed = *args.seed;
  if (!args.data_dir.empty()) cfg.data.dir = args.data_dir;
  cfg.apply_ablation();
  cfg.validate();
  return cfg;
}

void apply_threads(const cir::ExperimentConfig& cfg) {
#ifdef _OPENMP
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#else
  (void)cfg;
#endif
}

void write_snapshot(const cir::ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  cfg.save_file((out_dir / "resolved_config.json").string());
}

struct LoadedData {
  cir::World world;
  std::vector<cir::Triplet> train;
  std::vector<cir::Triplet> eval;
};

LoadedData load_data(const cir::ExperimentConfig& cfg) {
  if (cfg.data.dir.empty()) {
    throw cir::ConfigError("data.dir is empty; run generate-data first or pass --data");
  }
  LoadedData d;
  d.world = cir::load_world((fs::path(cfg.data.dir) / "world").string());
  const cir::TripletFileFormat fmt;
  const int g = d.world.payloads.rows();
  const fs::path train_path = fs::path(cfg.data.dir) / "triplets_train.jsonl";
  const fs::path eval_path = fs::path(cfg.data.dir) / "triplets_eval.jsonl";
  if (fs::exists(train_path)) d.train = cir::ingest_triplet_file(train_path.string(), fmt, g);
  if (fs::exists(eval_path)) d.eval = cir::ingest_triplet_file(eval_path.string(), fmt, g);
  return d;
}

int cmd_generate_data(const CommonArgs& args) {
  cir::ExperimentConfig cfg = resolve_config(args, /*require_file=*/false);
  const fs::path out = resolve_out_dir(args.out_dir, "generate-data");
  cfg.data.dir = out.string();
  apply_threads(cfg);

  const cir::World world = cir::generate_world(cfg.world);
  cir::write_world(world, (out / "world").string());
  const auto train = cir::sample_triplets(world, cfg.data.train_triplets, cfg.data.max_changes,
                                          cfg.data.train_seed, cfg.world.text_payload_dim);
  const auto eval = cir::sample_triplets(world, cfg.data.eval_queries, cfg.data.max_changes,
                                         cfg.data.eval_seed, cfg.world.text_payload_dim);
  cir::write_triplets(train, (out / "triplets_train.jsonl").string());
  cir::write_triplets(eval, (out / "triplets_eval.jsonl").string());
  write_snapshot(cfg, out);
  std::cout << "world: " << world.payloads.rows() << " gallery images, "
            << train.size() << " train triplets, " << eval.size() << " eval queries -> " << out
            << "\n";
  return 0;
}

cir::TrainState train_run(const cir::ExperimentConfig& cfg, const LoadedData& data,
                          const fs::path& out, bool quiet) {
  fs::create_directories(out / "checkpoints");
  std::ofstream log_file(out / "train_log.jsonl");
  if (!log_file) throw cir::IoError("cannot write train log");

  cir::TrainState state(cfg);
  const int steps_per_epoch =
      static_cast<int>(data.train.size()) / std::max(1, cfg.train.batch_size);
  cir::run_training(
      state, data.train, data.world.payloads,
      [&](const cir::TrainState& s, int epoch) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoints/epoch_%03d.ckpt", epoch);
        cir::save_checkpoint(s, (out / name).string());
      },
      [&](const cir::TrainLogRecord& rec) {
        log_file << rec.to_json().dump() << "\n";
        if (!quiet && rec.step % std::max(1, steps_per_epoch) == 0) {
          std::cout << "epoch " << rec.epoch << " step " << rec.step << " total "
                    << rec.losses.total << "\n";
        }
      });
  cir::save_checkpoint(state, (out / "final.ckpt").string());
  return state;
}

int cmd_train(const CommonArgs& args) {
  const cir::ExperimentConfig cfg = resolve_config(args, /*require_file=*/true);
  const fs::path out = resolve_out_dir(args.out_dir, "train");
  apply_threads(cfg);
  write_snapshot(cfg, out);
  const LoadedData data = load_data(cfg);
  if (data.train.empty()) throw cir::InvalidInputError("no training triplets found");
  train_run(cfg, data, out, /*quiet=*/false);
  std::cout << "final checkpoint: " << (out / "final.ckpt") << "\n";
  return 0;
}

cir::EvalReport evaluate_state(const cir::TrainState& state, const LoadedData& data) {
  cir::EvalProtocol protocol;
  protocol.recall_ks = state.cfg.eval.recall_ks;
  protocol.subset_ks = state.cfg.eval.subset_ks;
  return cir::evaluate(state.model, data.eval, data.world.payloads, protocol);
}

int cmd_evaluate(const CommonArgs& args) {
  if (args.checkpoint.empty()) throw cir::ConfigError("--checkpoint is required");
  cir::TrainState state = cir::load_checkpoint_for_eval(args.checkpoint);
  for (const std::string& o : args.overrides) state.cfg.apply_override(o);
  if (!args.data_dir.empty()) state.cfg.data.dir = args.data_dir;
  state.cfg.validate();
  apply_threads(state.cfg);

  const fs::path out = resolve_out_dir(args.out_dir, "evaluate");
  write_snapshot(state.cfg, out);
  const LoadedData data = load_data(state.cfg);
  if (data.eval.empty()) throw cir::InvalidInputError("no eval queries found");
  const cir::EvalReport report = evaluate_state(state, data);
  std::ofstream(out / "report.json") << report.to_json().dump(2) << "\n";
  std::ofstream(out / "report.txt") << report.to_text();
  std::cout << report.to_text();
  return 0;
}

int cmd_inspect_masks(const CommonArgs& args) {
  if (args.checkpoint.empty()) throw cir::ConfigError("--checkpoint is required");
  cir::TrainState state = cir::load_checkpoint_for_eval(args.checkpoint);
  for (const std::string& o : args.overrides) state.cfg.apply_override(o);
  if (!args.data_dir.empty()) state.cfg.data.dir = args.data_dir;
  state.cfg.validate();
  apply_threads(state.cfg);

  const fs::path out = resolve_out_dir(args.out_dir, "inspect-masks");
  write_snapshot(state.cfg, out);
  const LoadedData data = load_data(state.cfg);
  if (data.eval.empty()) throw cir::InvalidInputError("no eval queries found");

  const cir::MaskDump dump =
      cir::dump_masks(state.model, data.eval, data.world.payloads);
  std::ofstream masks_file(out / "masks.jsonl");
  for (size_t i = 0; i < data.eval.size(); ++i) {
    json rec{{"query", i},
             {"reference", data.eval[i].reference_index + 1},
             {"target", data.eval[i].target_index + 1},
             {"student_keep", dump.student_keep[i]},
             {"teacher_keep", dump.teacher_keep[i]},
             {"teacher_replace", dump.teacher_replace[i]}};
    if (data.eval[i].has_changes) rec["changes"] = data.eval[i].changes;
    masks_file << rec.dump() << "\n";
  }

  const cir::MaskAlignmentReport alignment = cir::mask_alignment_report(
      state.model, data.eval, data.world.payloads, data.world.spec.num_attributes);
  json aj{{"score", alignment.score}, {"slot_for_attribute", alignment.slot_for_attribute}};
  std::ofstream(out / "alignment.json") << aj.dump(2) << "\n";
  std::cout << "mask alignment score " << alignment.score << " over " << data.eval.size()
            << " queries\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args, int seeds) {
  const cir::ExperimentConfig base = resolve_config(args, /*require_file=*/true);
  const fs::path out = resolve_out_dir(args.out_dir, "ablate");
  apply_threads(base);
  write_snapshot(base, out);
  const LoadedData data = load_data(base);
  if (data.train.empty() || data.eval.empty()) {
    throw cir::InvalidInputError("ablate needs both train triplets and eval queries");
  }

  const std::vector<std::string> presets = {"full", "wo_ortho", "wo_target_guide",
                                            "wo_target_guide_c", "wo_target_guide_m"};
  json table = json::array();
  std::vector<std::string> lines;
  for (const std::string& preset : presets) {
    for (int s = 0; s < seeds; ++s) {
      cir::ExperimentConfig cfg = base;
      cfg.train.ablation = preset;
      cfg.apply_ablation();
      cfg.train.seed = base.train.seed + static_cast<uint64_t>(s);
      const fs::path run_dir = out / "runs" / (preset + "-s" + std::to_string(s));
      write_snapshot(cfg, run_dir);
      const cir::TrainState state = train_run(cfg, data, run_dir, /*quiet=*/true);
      const cir::EvalReport report = evaluate_state(state, data);
      std::ofstream(run_dir / "report.json") << report.to_json().dump(2) << "\n";

      json row{{"preset", preset}, {"seed", cfg.train.seed}};
      for (const auto& [k, v] : report.recall_at) row["recall@" + std::to_string(k)] = v;
      row["avg_recall"] = report.averages.at("avg_recall");
      table.push_back(row);

      std::ostringstream line;
      line << preset << " seed " << cfg.train.seed;
      for (const auto& [k, v] : report.recall_at) line << "  R@" << k << " " << v;
      line << "  avg " << report.averages.at("avg_recall");
      lines.push_back(line.str());
      std::cout << lines.back() << "\n";
    }
  }
  std::ofstream(out / "ablation.json") << table.dump(2) << "\n";
  std::ofstream table_file(out / "ablation_table.txt");
  for (const std::string& line : lines) table_file << line << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"composed image retrieval: synthetic-world training and evaluation"};
  app.require_subcommand(1);

  CommonArgs args;
  int ablate_seeds = 1;

  auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
    cmd->add_option("--config,-c", args.config_path, "experiment config file (JSON)");
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--out,-o", args.out_dir, "output directory");
    cmd->add_option("--data", args.data_dir, "data directory (overrides config data.dir)");
    cmd->add_option("--seed", args.seed, "training seed override");
    if (with_checkpoint) {
      cmd->add_option("--checkpoint", args.checkpoint, "checkpoint file");
    }
  };

  CLI::App* gen = app.add_subcommand("generate-data", "generate a synthetic world + triplets");
  add_common(gen, false);
  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, false);
  CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(eval, true);
  CLI::App* inspect = app.add_subcommand("inspect-masks", "dump keep/replace masks + alignment");
  add_common(inspect, true);
  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation switch matrix");
  add_common(ablate, false);
  ablate->add_option("--seeds", ablate_seeds, "seeds per preset")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_generate_data(args);
    if (train->parsed()) return cmd_train(args);
    if (eval->parsed()) return cmd_evaluate(args);
    if (inspect->parsed()) return cmd_inspect_masks(args);
    if (ablate->parsed()) return cmd_ablate(args, ablate_seeds);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
