#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cir/config.hpp"

// Drives the installed binary end to end.

namespace fs = std::filesystem;
using nlohmann::json;

TEST_SUITE_BEGIN("cli");

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(CIR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("cir_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  json j;
  in >> j;
  return j;
}

}  // namespace

TEST_CASE("unknown subcommands fail with a nonzero exit") {
  CHECK(run("frobnicate") != 0);
  CHECK(run("") != 0);
}

TEST_CASE("generate, train, evaluate, inspect-masks, ablate pipeline") {
  const fs::path root = fresh_dir("pipeline");

  // A configuration small enough to train in seconds.
  cir::ExperimentConfig cfg;
  cfg.world.num_attributes = 3;
  cfg.world.values_per_attribute = 3;
  cfg.world.gallery_size = 27;
  cfg.world.image_payload_dim = 8;
  cfg.world.text_payload_dim = 3;
  cfg.backbone.image = cir::EncoderConfig{16, 3, 8, 16};
  cfg.backbone.text = cir::EncoderConfig{12, 2, 8, 16};
  cfg.attributes.global_count = 2;
  cfg.attributes.local_count = 4;
  cfg.attributes.dim = 16;
  cfg.composition.hidden = 8;
  cfg.data.train_triplets = 128;
  cfg.data.eval_queries = 32;
  cfg.train.batch_size = 16;
  cfg.train.epochs = 2;
  cfg.eval.recall_ks = {1, 5, 10};
  const fs::path cfg_path = root / "config.json";
  cfg.save_file(cfg_path.string());

  const fs::path data = root / "data";
  REQUIRE(run("generate-data -c " + cfg_path.string() + " -o " + data.string()) == 0);
  CHECK(fs::exists(data / "world" / "manifest.json"));
  CHECK(fs::exists(data / "triplets_train.jsonl"));
  CHECK(fs::exists(data / "resolved_config.json"));

  const fs::path train_out = root / "run";
  REQUIRE(run("train -c " + cfg_path.string() + " --data " + data.string() + " -o " +
              train_out.string() + " --set train.epochs=2") == 0);
  CHECK(fs::exists(train_out / "final.ckpt"));
  CHECK(fs::exists(train_out / "checkpoints" / "epoch_002.ckpt"));
  CHECK(fs::exists(train_out / "train_log.jsonl"));

  // Overrides land in the snapshot.
  const json snapshot = read_json(train_out / "resolved_config.json");
  CHECK(snapshot.at("train").at("epochs").get<int>() == 2);
  CHECK(snapshot.at("data").at("dir").get<std::string>() == data.string());

  const fs::path eval_out = root / "eval";
  REQUIRE(run("evaluate --checkpoint " + (train_out / "final.ckpt").string() + " -o " +
              eval_out.string()) == 0);
  const json report = read_json(eval_out / "report.json");
  CHECK(report.at("num_queries").get<int>() == 32);
  CHECK(report.at("recall_at").contains("10"));

  const fs::path masks_out = root / "masks";
  REQUIRE(run("inspect-masks --checkpoint " + (train_out / "final.ckpt").string() + " -o " +
              masks_out.string()) == 0);
  CHECK(fs::exists(masks_out / "masks.jsonl"));
  CHECK(fs::exists(masks_out / "alignment.json"));

  const fs::path ablate_out = root / "ablate";
  REQUIRE(run("ablate -c " + (data / "resolved_config.json").string() + " -o " +
              ablate_out.string() + " --set train.epochs=1 --set data.train_triplets=128") == 0);
  const json table = read_json(ablate_out / "ablation.json");
  CHECK(table.size() == 5);  // full + four switches
  std::set<std::string> presets;
  for (const json& row : table) presets.insert(row.at("preset").get<std::string>());
  CHECK(presets == std::set<std::string>{"full", "wo_ortho", "wo_target_guide",
                                         "wo_target_guide_c", "wo_target_guide_m"});
  CHECK(fs::exists(ablate_out / "ablation_table.txt"));
}

TEST_CASE("an untrained model evaluates at chance level") {
  const fs::path root = fresh_dir("chance");
  cir::ExperimentConfig cfg;  // defaults: G=256, A=6, V=4
  cfg.data.train_triplets = 64;
  cfg.data.eval_queries = 1000;
  cfg.train.epochs = 0;  // leaves the seed-initialized model untouched
  cfg.train.batch_size = 16;
  const fs::path cfg_path = root / "config.json";
  cfg.save_file(cfg_path.string());

  const fs::path data = root / "data";
  REQUIRE(run("generate-data -c " + cfg_path.string() + " -o " + data.string()) == 0);
  const fs::path train_out = root / "run";
  REQUIRE(run("train -c " + cfg_path.string() + " --data " + data.string() + " -o " +
              train_out.string()) == 0);
  const fs::path eval_out = root / "eval";
  REQUIRE(run("evaluate --checkpoint " + (train_out / "final.ckpt").string() + " -o " +
              eval_out.string()) == 0);
  const json report = read_json(eval_out / "report.json");
  const double r1 = report.at("recall_at").at("1").get<double>();
  CHECK(r1 >= 0.0);
  CHECK(r1 <= 3.0 / 256.0);
}

TEST_SUITE_END();
