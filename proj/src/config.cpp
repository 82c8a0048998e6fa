#include "cir/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cir {

using nlohmann::json;

namespace {

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json encoder_to_json(const EncoderConfig& e) {
  return json{{"hidden", e.hidden},
              {"tokens", e.tokens},
              {"token_dim", e.token_dim},
              {"global_dim", e.global_dim}};
}

EncoderConfig encoder_from_json(const json& j, EncoderConfig base) {
  get_if(j, "hidden", base.hidden);
  get_if(j, "tokens", base.tokens);
  get_if(j, "token_dim", base.token_dim);
  get_if(j, "global_dim", base.global_dim);
  return base;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["world"] = {{"num_attributes", world.num_attributes},
                {"values_per_attribute", world.values_per_attribute},
                {"gallery_size", world.gallery_size},
                {"noise_std", world.noise_std},
                {"render_seed", world.render_seed},
                {"image_payload_dim", world.image_payload_dim},
                {"text_payload_dim", world.text_payload_dim}};
  j["data"] = {{"dir", data.dir},
               {"train_triplets", data.train_triplets},
               {"eval_queries", data.eval_queries},
               {"max_changes", data.max_changes},
               {"train_seed", data.train_seed},
               {"eval_seed", data.eval_seed}};
  j["backbone"] = {{"image", encoder_to_json(backbone.image)},
                   {"text", encoder_to_json(backbone.text)},
                   {"activation", backbone.activation},
                   {"init_seed", backbone.init_seed},
                   {"freeze", backbone.freeze}};
  j["attributes"] = {{"global_count", attributes.global_count},
                     {"local_count", attributes.local_count},
                     {"dim", attributes.dim}};
  j["composition"] = {{"hidden", composition.hidden},
                      {"distill_stop_gradient", composition.distill_stop_gradient}};
  j["loss"] = {{"temperature", loss.temperature}, {"lambda", loss.lambda},
               {"eta", loss.eta},                 {"mu", loss.mu},
               {"nu", loss.nu},                   {"kappa", loss.kappa},
               {"cosine_eps", loss.cosine_eps}};
  j["train"] = {{"batch_size", train.batch_size},
                {"epochs", train.epochs},
                {"base_lr", train.base_lr},
                {"backbone_lr", train.backbone_lr},
                {"lr_decay_factor", train.lr_decay_factor},
                {"decay_epochs", train.decay_epochs},
                {"weight_decay", train.weight_decay},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"adam_eps", train.adam_eps},
                {"grad_clip", train.grad_clip},
                {"seed", train.seed},
                {"ablation", train.ablation},
                {"disabled_terms", train.disabled_terms}};
  j["eval"] = {{"recall_ks", eval.recall_ks}, {"subset_ks", eval.subset_ks}};
  j["threads"] = threads;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("world")) {
    const json& w = j.at("world");
    get_if(w, "num_attributes", c.world.num_attributes);
    get_if(w, "values_per_attribute", c.world.values_per_attribute);
    get_if(w, "gallery_size", c.world.gallery_size);
    get_if(w, "noise_std", c.world.noise_std);
    get_if(w, "render_seed", c.world.render_seed);
    get_if(w, "image_payload_dim", c.world.image_payload_dim);
    get_if(w, "text_payload_dim", c.world.text_payload_dim);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    get_if(d, "dir", c.data.dir);
    get_if(d, "train_triplets", c.data.train_triplets);
    get_if(d, "eval_queries", c.data.eval_queries);
    get_if(d, "max_changes", c.data.max_changes);
    get_if(d, "train_seed", c.data.train_seed);
    get_if(d, "eval_seed", c.data.eval_seed);
  }
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    if (b.contains("image")) c.backbone.image = encoder_from_json(b.at("image"), c.backbone.image);
    if (b.contains("text")) c.backbone.text = encoder_from_json(b.at("text"), c.backbone.text);
    get_if(b, "activation", c.backbone.activation);
    get_if(b, "init_seed", c.backbone.init_seed);
    get_if(b, "freeze", c.backbone.freeze);
  }
  if (j.contains("attributes")) {
    const json& a = j.at("attributes");
    get_if(a, "global_count", c.attributes.global_count);
    get_if(a, "local_count", c.attributes.local_count);
    get_if(a, "dim", c.attributes.dim);
  }
  if (j.contains("composition")) {
    const json& m = j.at("composition");
    get_if(m, "hidden", c.composition.hidden);
    get_if(m, "distill_stop_gradient", c.composition.distill_stop_gradient);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    get_if(l, "temperature", c.loss.temperature);
    get_if(l, "lambda", c.loss.lambda);
    get_if(l, "eta", c.loss.eta);
    get_if(l, "mu", c.loss.mu);
    get_if(l, "nu", c.loss.nu);
    get_if(l, "kappa", c.loss.kappa);
    get_if(l, "cosine_eps", c.loss.cosine_eps);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    get_if(t, "batch_size", c.train.batch_size);
    get_if(t, "epochs", c.train.epochs);
    get_if(t, "base_lr", c.train.base_lr);
    get_if(t, "backbone_lr", c.train.backbone_lr);
    get_if(t, "lr_decay_factor", c.train.lr_decay_factor);
    get_if(t, "decay_epochs", c.train.decay_epochs);
    get_if(t, "weight_decay", c.train.weight_decay);
    get_if(t, "beta1", c.train.beta1);
    get_if(t, "beta2", c.train.beta2);
    get_if(t, "adam_eps", c.train.adam_eps);
    get_if(t, "grad_clip", c.train.grad_clip);
    get_if(t, "seed", c.train.seed);
    get_if(t, "ablation", c.train.ablation);
    get_if(t, "disabled_terms", c.train.disabled_terms);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    get_if(e, "recall_ks", c.eval.recall_ks);
    get_if(e, "subset_ks", c.eval.subset_ks);
  }
  get_if(j, "threads", c.threads);
  return c;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("config parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file: " + path);
  out << to_json().dump(2) << "\n";
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value, got: " + assignment);
  }
  std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  for (char& ch : path) {
    if (ch == '.') ch = '/';
  }
  json j = to_json();
  const json::json_pointer ptr("/" + path);
  if (!j.contains(ptr)) throw ConfigError("unknown config key in override: " + assignment);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings are allowed unquoted
  }
  // Keep the original type: "7" stays a string if the field is a string.
  if (j.at(ptr).is_string() && !parsed.is_string()) parsed = value;
  j[ptr] = parsed;
  try {
    *this = from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("override " + assignment + " has the wrong type: " + e.what());
  }
}

void ExperimentConfig::apply_ablation() {
  const std::string& a = train.ablation;
  if (a == "full" || a.empty()) return;
  if (a == "wo_ortho") {
    loss.mu = 0.0;
  } else if (a == "wo_target_guide") {
    loss.lambda = 0.0;
    loss.eta = 0.0;
    loss.nu = 0.0;
    loss.kappa = 0.0;
  } else if (a == "wo_target_guide_c") {
    loss.nu = 0.0;
  } else if (a == "wo_target_guide_m") {
    loss.kappa = 0.0;
  } else {
    throw ConfigError("unknown ablation switch: " + a);
  }
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(world.num_attributes >= 1, "world.num_attributes must be >= 1");
  require(world.values_per_attribute >= 2, "world.values_per_attribute must be >= 2");
  require(world.gallery_size >= 2, "world.gallery_size must be >= 2");
  require(world.noise_std >= 0.0, "world.noise_std must be >= 0");
  require(world.image_payload_dim >= 1, "world.image_payload_dim must be >= 1");
  require(world.text_payload_dim >= world.num_attributes,
          "world.text_payload_dim must be >= num_attributes (one slot per attribute)");
  require(data.max_changes >= 1 && data.max_changes <= world.num_attributes,
          "data.max_changes must be in [1, num_attributes]");
  require(backbone.activation == "tanh" || backbone.activation == "relu",
          "backbone.activation must be tanh or relu");
  for (const EncoderConfig* e : {&backbone.image, &backbone.text}) {
    require(e->hidden >= 1 && e->tokens >= 1 && e->token_dim >= 1 && e->global_dim >= 1,
            "encoder dimensions must be positive");
  }
  require(attributes.global_count >= 1, "attributes.global_count must be >= 1");
  require(attributes.local_count >= 1, "attributes.local_count must be >= 1");
  require(attributes.dim >= 1, "attributes.dim must be >= 1");
  require(composition.hidden >= 0, "composition.hidden must be >= 0");
  require(loss.temperature > 0.0, "loss.temperature must be > 0");
  require(loss.lambda >= 0 && loss.eta >= 0 && loss.mu >= 0 && loss.nu >= 0 && loss.kappa >= 0,
          "loss weights must be >= 0");
  require(loss.cosine_eps >= 0.0, "loss.cosine_eps must be >= 0");
  require(train.batch_size >= 1, "train.batch_size must be >= 1");
  require(train.epochs >= 0, "train.epochs must be >= 0");
  require(train.base_lr > 0.0 && train.backbone_lr > 0.0, "learning rates must be > 0");
  require(train.lr_decay_factor > 0.0, "train.lr_decay_factor must be > 0");
  for (size_t i = 1; i < train.decay_epochs.size(); ++i) {
    require(train.decay_epochs[i - 1] < train.decay_epochs[i],
            "train.decay_epochs must be strictly ascending");
  }
  require(!eval.recall_ks.empty(), "eval.recall_ks must be nonempty");
  for (int k : eval.recall_ks) require(k >= 1, "recall K values must be >= 1");
  for (int k : eval.subset_ks) require(k >= 1, "subset K values must be >= 1");
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t ExperimentConfig::fingerprint() const { return fnv1a64(to_json().dump()); }

}  // namespace cir
