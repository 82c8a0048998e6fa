// Compares the OpenMP production kernels against the serial reference
// implementations on benchmark-sized inputs.

#include <benchmark/benchmark.h>

#include "cir/data.hpp"
#include "cir/eval.hpp"
#include "cir/model.hpp"
#include "cir/train.hpp"
#include "reference.hpp"

using namespace cir;

namespace {

ExperimentConfig bench_config() {
  ExperimentConfig cfg;
  cfg.world.gallery_size = 256;
  cfg.data.train_triplets = 256;
  cfg.data.eval_queries = 64;
  return cfg;
}

struct BenchData {
  ExperimentConfig cfg = bench_config();
  Model model{cfg};
  World world = generate_world(cfg.world);
  std::vector<Triplet> queries =
      sample_triplets(world, cfg.data.eval_queries, 2, 3, cfg.world.text_payload_dim);
  std::vector<Matrix> composed, targets;

  BenchData() {
    Rng rng(1);
    for (int i = 0; i < 64; ++i) {
      Matrix a(12, 64), b(12, 64);
      for (size_t n = 0; n < a.size(); ++n) a.data()[n] = rng.normal();
      for (size_t n = 0; n < b.size(); ++n) b.data()[n] = rng.normal();
      composed.push_back(std::move(a));
      targets.push_back(std::move(b));
    }
  }
};

BenchData& data() {
  static BenchData d;
  return d;
}

ref::EncoderWeights image_encoder_weights(const Model& model) {
  auto matrix_of = [&](const std::string& name) {
    const ParamInfo* info = model.find_param(name);
    Matrix m(info->shape[0], info->shape[1]);
    std::copy(model.params().begin() + info->offset,
              model.params().begin() + info->offset + info->count, m.data());
    return m;
  };
  auto vec_of = [&](const std::string& name) {
    const ParamInfo* info = model.find_param(name);
    return Vec(model.params().begin() + info->offset,
               model.params().begin() + info->offset + info->count);
  };
  ref::EncoderWeights w;
  w.w1 = matrix_of("image_encoder.input_to_hidden.weight");
  w.b1 = vec_of("image_encoder.input_to_hidden.bias");
  w.w2 = matrix_of("image_encoder.hidden_to_tokens.weight");
  w.b2 = vec_of("image_encoder.hidden_to_tokens.bias");
  w.wg = matrix_of("image_encoder.mean_to_global.weight");
  w.bg = vec_of("image_encoder.mean_to_global.bias");
  w.tokens = model.image_encoder().tokens;
  w.token_dim = model.image_encoder().token_dim;
  return w;
}

void BM_SimilarityMatrixSerialRef(benchmark::State& state) {
  BenchData& d = data();
  for (auto _ : state) {
    Matrix sims(64, 64);
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) {
        sims(i, j) = ref::attribute_similarity(d.composed[i], d.targets[j]);
      }
    }
    benchmark::DoNotOptimize(sims.data());
  }
}
BENCHMARK(BM_SimilarityMatrixSerialRef);

void BM_SimilarityMatrixParallel(benchmark::State& state) {
  BenchData& d = data();
  for (auto _ : state) {
    Matrix sims = attribute_similarity_matrix(d.composed, d.targets, 1e-8);
    benchmark::DoNotOptimize(sims.data());
  }
}
BENCHMARK(BM_SimilarityMatrixParallel);

void BM_GalleryEmbeddingsSerialRef(benchmark::State& state) {
  BenchData& d = data();
  const ref::EncoderWeights w = image_encoder_weights(d.model);
  const Matrix masks = [&] {
    const ParamInfo* info = d.model.find_param("attributes.condition_masks");
    Matrix m(info->shape[0], info->shape[1]);
    std::copy(d.model.params().begin() + info->offset,
              d.model.params().begin() + info->offset + info->count, m.data());
    return m;
  }();
  for (auto _ : state) {
    double acc = 0.0;
    for (int g = 0; g < d.world.payloads.rows(); ++g) {
      Vec payload(d.world.payloads.row(g), d.world.payloads.row(g) + d.world.payloads.cols());
      const ref::Encoded enc = ref::encode(w, payload);
      const Matrix rows = ref::global_attributes(enc.global, masks);
      acc += rows(0, 0);
    }
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(BM_GalleryEmbeddingsSerialRef);

void BM_QueryScoringParallel(benchmark::State& state) {
  BenchData& d = data();
  for (auto _ : state) {
    Matrix scores = student_score_matrix(d.model, d.queries, d.world.payloads);
    benchmark::DoNotOptimize(scores.data());
  }
}
BENCHMARK(BM_QueryScoringParallel);

void BM_RecallSerialRefSort(benchmark::State& state) {
  Rng rng(5);
  Matrix scores(64, 256);
  for (size_t i = 0; i < scores.size(); ++i) scores.data()[i] = rng.normal();
  std::vector<int> targets(64);
  for (int i = 0; i < 64; ++i) targets[i] = static_cast<int>(rng.uniform_int(0, 255));
  for (auto _ : state) {
    const auto recalls = ref::recall_oracle(scores, targets, {1, 5, 10, 50});
    benchmark::DoNotOptimize(&recalls);
  }
}
BENCHMARK(BM_RecallSerialRefSort);

void BM_RecallCounting(benchmark::State& state) {
  Rng rng(5);
  Matrix scores(64, 256);
  for (size_t i = 0; i < scores.size(); ++i) scores.data()[i] = rng.normal();
  std::vector<int> targets(64);
  for (int i = 0; i < 64; ++i) targets[i] = static_cast<int>(rng.uniform_int(0, 255));
  EvalProtocol protocol;
  protocol.recall_ks = {1, 5, 10, 50};
  for (auto _ : state) {
    const EvalReport report =
        compute_recalls(scores, targets, std::vector<std::vector<int>>(64), protocol);
    benchmark::DoNotOptimize(&report);
  }
}
BENCHMARK(BM_RecallCounting);

void BM_TrainStepParallel(benchmark::State& state) {
  BenchData& d = data();
  ExperimentConfig cfg = d.cfg;
  cfg.train.batch_size = 64;
  TrainState ts(cfg);
  const auto triplets = sample_triplets(d.world, 64, 2, 9, cfg.world.text_payload_dim);
  std::vector<int> indices(64);
  for (int i = 0; i < 64; ++i) indices[i] = i;
  const TripletBatch batch = assemble_batch(triplets, indices, d.world.payloads);
  for (auto _ : state) {
    const TrainLogRecord rec = train_step(ts, batch);
    benchmark::DoNotOptimize(&rec);
  }
}
BENCHMARK(BM_TrainStepParallel);

}  // namespace

BENCHMARK_MAIN();
