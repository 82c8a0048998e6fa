#include "cir/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace cir {

namespace fs = std::filesystem;
using nlohmann::json;

json TrainLogRecord::to_json() const {
  return json{{"step", step},
              {"epoch", epoch},
              {"rank_stu", losses.rank_stu},
              {"rank_tea", losses.rank_tea},
              {"mask_tea", losses.mask_tea},
              {"ortho", losses.ortho},
              {"ckd", losses.ckd},
              {"kl", losses.kl},
              {"total", losses.total},
              {"lr_head", lr_head},
              {"lr_backbone", lr_backbone},
              {"wall_ms", wall_ms}};
}

double lr_at_epoch(const TrainConfig& cfg, int epoch, double base) {
  double lr = base;
  for (int decay : cfg.decay_epochs) {
    if (epoch >= decay) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

TripletBatch assemble_batch(const std::vector<Triplet>& dataset, const std::vector<int>& indices,
                            const Matrix& gallery_payloads) {
  TripletBatch batch;
  const int cols = gallery_payloads.cols();
  for (int idx : indices) {
    const Triplet& t = dataset.at(idx);
    batch.reference.emplace_back(gallery_payloads.row(t.reference_index),
                                 gallery_payloads.row(t.reference_index) + cols);
    batch.text.push_back(t.text_payload);
    batch.target.emplace_back(gallery_payloads.row(t.target_index),
                              gallery_payloads.row(t.target_index) + cols);
    batch.target_ids.push_back(t.target_index);
  }
  return batch;
}

namespace {

const char* first_nonfinite_term(const LossBreakdown& l) {
  if (!std::isfinite(l.rank_stu)) return "rank_stu";
  if (!std::isfinite(l.rank_tea)) return "rank_tea";
  if (!std::isfinite(l.mask_tea)) return "mask_tea";
  if (!std::isfinite(l.ortho)) return "ortho";
  if (!std::isfinite(l.ckd)) return "ckd";
  if (!std::isfinite(l.kl)) return "kl";
  if (!std::isfinite(l.total)) return "total";
  return nullptr;
}

}  // namespace

TrainLogRecord train_step(TrainState& state, const TripletBatch& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = state.cfg;
  if (batch.size() != cfg.train.batch_size) {
    throw InvalidInputError("batch size " + std::to_string(batch.size()) +
                            " does not match config batch_size " +
                            std::to_string(cfg.train.batch_size));
  }

  const TermSwitches switches = TermSwitches::from_disabled(cfg.train.disabled_terms);
  BatchTrace trace;
  const LossBreakdown losses =
      model_batch_forward(state.model, batch, cfg.loss, switches, trace);
  if (const char* term = first_nonfinite_term(losses)) {
    throw Error(std::string("non-finite loss term '") + term + "' at step " +
                std::to_string(state.step));
  }

  TermWeights weights;
  weights.rank_stu = switches.rank_stu ? 1.0 : 0.0;
  weights.rank_tea = switches.rank_tea ? cfg.loss.lambda : 0.0;
  weights.mask_tea = switches.mask_tea ? cfg.loss.eta : 0.0;
  weights.ortho = switches.ortho ? cfg.loss.mu : 0.0;
  weights.ckd = switches.ckd ? cfg.loss.nu : 0.0;
  weights.kl = switches.kl ? cfg.loss.kappa : 0.0;

  Vec grads(state.model.param_count(), 0.0);
  model_batch_backward(state.model, batch, trace, cfg.loss, weights,
                       cfg.composition.distill_stop_gradient, grads);

  if (cfg.train.grad_clip > 0.0) {
    double norm2 = 0.0;
    for (double g : grads) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm > cfg.train.grad_clip) {
      const double scale = cfg.train.grad_clip / norm;
      for (double& g : grads) g *= scale;
    }
  }

  const int epoch = state.epoch + 1;
  AdamW::StepRates rates;
  rates.lr_head = lr_at_epoch(cfg.train, epoch, cfg.train.base_lr);
  rates.lr_backbone = lr_at_epoch(cfg.train, epoch, cfg.train.backbone_lr);
  rates.freeze_backbone = cfg.backbone.freeze;
  state.opt.step(state.model.params(), grads, state.model.param_infos(), rates, cfg.train);
  ++state.step;

  TrainLogRecord rec;
  rec.step = state.step;
  rec.epoch = epoch;
  rec.losses = losses;
  rec.lr_head = rates.lr_head;
  rec.lr_backbone = rates.lr_backbone;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
  return rec;
}

void run_training(TrainState& state, const std::vector<Triplet>& dataset,
                  const Matrix& gallery_payloads, const CheckpointSink& checkpoint_sink,
                  const LogSink& log_sink) {
  if (dataset.empty()) throw InvalidInputError("training dataset is empty");
  const int B = state.cfg.train.batch_size;

  for (int epoch = state.epoch + 1; epoch <= state.cfg.train.epochs; ++epoch) {
    // Each epoch's order depends only on the RNG state, so a resumed run
    // replays the identical batch sequence.
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    state.data_rng.shuffle(order);
    const int batches = static_cast<int>(order.size()) / B;  // drop last partial batch
    for (int b = 0; b < batches; ++b) {
      std::vector<int> indices(order.begin() + static_cast<size_t>(b) * B,
                               order.begin() + static_cast<size_t>(b + 1) * B);
      const TripletBatch batch = assemble_batch(dataset, indices, gallery_payloads);
      const TrainLogRecord rec = train_step(state, batch);
      if (log_sink) log_sink(rec);
    }
    state.epoch = epoch;
    if (checkpoint_sink) checkpoint_sink(state, epoch);
  }
}

// --- checkpoint container -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'I', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

struct CheckpointHeader {
  json config;
  uint64_t fingerprint = 0;
  int64_t step = 0;
  int epoch = 0;
  int64_t opt_steps = 0;
  std::string rng_state;
  bool has_optimizer = false;
  std::vector<std::pair<std::string, size_t>> tensors;  // name, count
};

CheckpointHeader read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw CheckpointError("not a checkpoint file: " + path);
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path);
  }
  const uint64_t header_len = read_u64(in);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path);

  json h;
  try {
    h = json::parse(header_text);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  CheckpointHeader out;
  out.config = h.at("config");
  out.fingerprint = h.at("fingerprint").get<uint64_t>();
  out.step = h.at("step").get<int64_t>();
  out.epoch = h.at("epoch").get<int>();
  out.opt_steps = h.at("opt_steps").get<int64_t>();
  out.rng_state = h.at("rng").get<std::string>();
  out.has_optimizer = h.at("has_optimizer").get<bool>();
  for (const json& t : h.at("tensors")) {
    out.tensors.emplace_back(t.at("name").get<std::string>(), t.at("count").get<size_t>());
  }
  return out;
}

void verify_fingerprint(const CheckpointHeader& header, const std::string& path) {
  const ExperimentConfig cfg = ExperimentConfig::from_json(header.config);
  if (cfg.fingerprint() != header.fingerprint) {
    throw CheckpointError("config fingerprint mismatch in " + path +
                          "; the checkpoint does not match its embedded config");
  }
}

void read_doubles(std::istream& in, double* dst, size_t count, const std::string& path) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw CheckpointError("truncated checkpoint payload in " + path);
}

TrainState load_checkpoint_impl(const std::string& path, bool eval_mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  const CheckpointHeader header = read_header(in, path);
  verify_fingerprint(header, path);
  if (!eval_mode && !header.has_optimizer) {
    throw CheckpointError("checkpoint " + path + " has no optimizer moments; cannot resume");
  }

  TrainState state(ExperimentConfig::from_json(header.config));
  state.step = header.step;
  state.epoch = header.epoch;
  state.opt.set_steps(header.opt_steps);
  state.data_rng = Rng::deserialize(header.rng_state);

  // Teacher tensors may be stripped for evaluation-only checkpoints.
  std::fill(state.model.params().begin(), state.model.params().end(), 0.0);
  std::vector<bool> seen(state.model.param_infos().size(), false);
  for (const auto& [name, count] : header.tensors) {
    const ParamInfo* info = state.model.find_param(name);
    if (!info) throw CheckpointError("checkpoint tensor '" + name + "' unknown to this config");
    if (info->count != count) {
      throw CheckpointError("checkpoint tensor '" + name + "' has count " +
                            std::to_string(count) + ", expected " +
                            std::to_string(info->count));
    }
    read_doubles(in, state.model.params().data() + info->offset, count, path);
    seen[info - state.model.param_infos().data()] = true;
  }
  for (size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) continue;
    const std::string& name = state.model.param_infos()[i].name;
    const bool teacher = name.rfind("teacher_", 0) == 0;
    if (!eval_mode || !teacher) {
      throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    }
  }
  if (header.has_optimizer) {
    for (const auto& [name, count] : header.tensors) {
      const ParamInfo* info = state.model.find_param(name);
      read_doubles(in, state.opt.first_moment().data() + info->offset, count, path);
    }
    for (const auto& [name, count] : header.tensors) {
      const ParamInfo* info = state.model.find_param(name);
      read_doubles(in, state.opt.second_moment().data() + info->offset, count, path);
    }
  }
  return state;
}

void write_checkpoint_file(const std::string& path, const json& header_json,
                           const std::vector<std::pair<const double*, size_t>>& blobs) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const std::string header_text = header_json.dump();
    write_u64(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [ptr, count] : blobs) {
      out.write(reinterpret_cast<const char*>(ptr),
                static_cast<std::streamsize>(count * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  json tensors = json::array();
  std::vector<std::pair<const double*, size_t>> blobs;
  for (const ParamInfo& info : state.model.param_infos()) {
    tensors.push_back(json{{"name", info.name}, {"shape", info.shape}, {"count", info.count}});
    blobs.emplace_back(state.model.params().data() + info.offset, info.count);
  }
  for (const ParamInfo& info : state.model.param_infos()) {
    blobs.emplace_back(state.opt.first_moment().data() + info.offset, info.count);
  }
  for (const ParamInfo& info : state.model.param_infos()) {
    blobs.emplace_back(state.opt.second_moment().data() + info.offset, info.count);
  }
  const json header{{"config", state.cfg.to_json()},
                    {"fingerprint", state.cfg.fingerprint()},
                    {"step", state.step},
                    {"epoch", state.epoch},
                    {"opt_steps", state.opt.steps()},
                    {"rng", state.data_rng.serialize()},
                    {"has_optimizer", true},
                    {"tensors", tensors}};
  write_checkpoint_file(path, header, blobs);
}

TrainState load_checkpoint(const std::string& path) { return load_checkpoint_impl(path, false); }

TrainState load_checkpoint_for_eval(const std::string& path) {
  return load_checkpoint_impl(path, true);
}

void strip_teacher_parameters(const std::string& in_path, const std::string& out_path) {
  TrainState state = load_checkpoint_for_eval(in_path);
  json tensors = json::array();
  std::vector<std::pair<const double*, size_t>> blobs;
  for (const ParamInfo& info : state.model.param_infos()) {
    if (info.name.rfind("teacher_", 0) == 0) continue;
    tensors.push_back(json{{"name", info.name}, {"shape", info.shape}, {"count", info.count}});
    blobs.emplace_back(state.model.params().data() + info.offset, info.count);
  }
  const json header{{"config", state.cfg.to_json()},
                    {"fingerprint", state.cfg.fingerprint()},
                    {"step", state.step},
                    {"epoch", state.epoch},
                    {"opt_steps", state.opt.steps()},
                    {"rng", state.data_rng.serialize()},
                    {"has_optimizer", false},
                    {"tensors", tensors}};
  write_checkpoint_file(out_path, header, blobs);
}

}  // namespace cir
