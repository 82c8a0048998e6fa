#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cir/eval.hpp"
#include "cir/train.hpp"
#include "test_util.hpp"

using namespace cir;
using namespace cir::testutil;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("checkpoint");

namespace {

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "cir_test_ckpt";
  fs::create_directories(dir);
  return dir;
}

TrainState trained_state(const ExperimentConfig& cfg, const World& world,
                         const std::vector<Triplet>& triplets) {
  TrainState state(cfg);
  const TripletBatch batch = assemble_batch(triplets, {0, 1, 2}, world.payloads);
  for (int i = 0; i < 3; ++i) train_step(state, batch);
  return state;
}

}  // namespace

TEST_CASE("save then load restores parameters, moments, counters, and RNG bit-exactly") {
  ExperimentConfig cfg = tiny_config();
  const World world = generate_world(cfg.world);
  const auto triplets = sample_triplets(world, 16, 2, 5, cfg.world.text_payload_dim);
  TrainState state = trained_state(cfg, world, triplets);
  state.data_rng.uniform();  // advance mid-stream

  const std::string path = (work_dir() / "full.ckpt").string();
  save_checkpoint(state, path);
  TrainState loaded = load_checkpoint(path);

  CHECK(loaded.model.params() == state.model.params());
  CHECK(loaded.opt.first_moment() == state.opt.first_moment());
  CHECK(loaded.opt.second_moment() == state.opt.second_moment());
  CHECK(loaded.opt.steps() == state.opt.steps());
  CHECK(loaded.step == state.step);
  CHECK(loaded.epoch == state.epoch);
  CHECK(loaded.data_rng == state.data_rng);
  CHECK(loaded.cfg.fingerprint() == state.cfg.fingerprint());
}

TEST_CASE("a tampered config refuses to load") {
  ExperimentConfig cfg = tiny_config();
  const World world = generate_world(cfg.world);
  const auto triplets = sample_triplets(world, 8, 2, 5, cfg.world.text_payload_dim);
  TrainState state = trained_state(cfg, world, triplets);
  const std::string path = (work_dir() / "tampered.ckpt").string();
  save_checkpoint(state, path);

  // Flip one digit of the loss temperature inside the embedded config header.
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  const std::string needle = "\"temperature\":0.1";
  const size_t pos = bytes.find(needle);
  REQUIRE(pos != std::string::npos);
  bytes[pos + needle.size() - 1] = '2';
  std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());

  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("stripping teacher parameters leaves evaluation unchanged") {
  ExperimentConfig cfg = tiny_config();
  const World world = generate_world(cfg.world);
  const auto triplets = sample_triplets(world, 32, 2, 5, cfg.world.text_payload_dim);
  TrainState state = trained_state(cfg, world, triplets);

  const std::string full_path = (work_dir() / "with_teacher.ckpt").string();
  const std::string stripped_path = (work_dir() / "student_only.ckpt").string();
  save_checkpoint(state, full_path);
  strip_teacher_parameters(full_path, stripped_path);

  EvalProtocol protocol;
  protocol.recall_ks = {1, 5};
  const auto queries = sample_triplets(world, 10, 2, 6, cfg.world.text_payload_dim);

  TrainState full = load_checkpoint_for_eval(full_path);
  TrainState stripped = load_checkpoint_for_eval(stripped_path);
  const EvalReport a = evaluate(full.model, queries, world.payloads, protocol);
  const EvalReport b = evaluate(stripped.model, queries, world.payloads, protocol);
  CHECK(a == b);

  // Resuming training from a student-only checkpoint must be refused.
  CHECK_THROWS_AS(load_checkpoint(stripped_path), CheckpointError);
}

TEST_SUITE_END();
