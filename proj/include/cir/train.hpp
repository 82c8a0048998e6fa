#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cir/adamw.hpp"
#include "cir/data.hpp"
#include "cir/model.hpp"
#include "cir/rng.hpp"

namespace cir {

struct TrainLogRecord {
  int64_t step = 0;
  int epoch = 0;
  LossBreakdown losses;
  double lr_head = 0.0;
  double lr_backbone = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

/// Everything a resumable run needs: parameters, optimizer moments, counters,
/// and the data-order RNG.
struct TrainState {
  ExperimentConfig cfg;
  Model model;
  AdamW opt;
  int64_t step = 0;
  int epoch = 0;  // completed epochs
  Rng data_rng;

  explicit TrainState(const ExperimentConfig& config)
      : cfg(config), model(config), opt(model.param_count()), data_rng(config.train.seed) {}
};

/// Learning rate for a 1-based epoch: base scaled by the decay factor once
/// per decay epoch already reached.
double lr_at_epoch(const TrainConfig& cfg, int epoch, double base);

/// One optimization step over a batch. Throws Error with the offending term
/// named if any loss value is non-finite.
TrainLogRecord train_step(TrainState& state, const TripletBatch& batch);

TripletBatch assemble_batch(const std::vector<Triplet>& dataset, const std::vector<int>& indices,
                            const Matrix& gallery_payloads);

using CheckpointSink = std::function<void(const TrainState&, int epoch)>;
using LogSink = std::function<void(const TrainLogRecord&)>;

/// Epoch loop with per-epoch shuffling (without replacement, last partial
/// batch dropped), LR schedule, and per-epoch checkpointing. Resumes cleanly
/// from a state whose epoch counter is mid-schedule.
void run_training(TrainState& state, const std::vector<Triplet>& dataset,
                  const Matrix& gallery_payloads, const CheckpointSink& checkpoint_sink,
                  const LogSink& log_sink);

// --- checkpoint container -------------------------------------------------------

/// Versioned binary container: JSON header (config + fingerprint + counters +
/// RNG state + tensor table) followed by raw little-endian doubles for the
/// parameters and, when present, the optimizer moments.
void save_checkpoint(const TrainState& state, const std::string& path);

/// Full load for resuming; refuses version or fingerprint mismatches and
/// requires optimizer moments.
TrainState load_checkpoint(const std::string& path);

/// Evaluation-mode load: optimizer moments optional, teacher head tensors may
/// be absent (they are zero-filled; the student scoring path never reads
/// them).
TrainState load_checkpoint_for_eval(const std::string& path);

/// Rewrites a checkpoint without teacher head tensors or optimizer moments.
void strip_teacher_parameters(const std::string& in_path, const std::string& out_path);

}  // namespace cir
