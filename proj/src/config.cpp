#include "vct/config.hpp"

#include <fstream>
#include <set>

#include "vct/tensor.hpp"
#include "vct/tensor_io.hpp"

namespace vct {
namespace {

using nlohmann::json;

// Reads optional fields from one JSON object and rejects anything unknown.
class FieldReader {
 public:
  FieldReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* object(const char* key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key())) throw ConfigError(where_ + ": unknown field \"" + it.key() + "\"");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

}  // namespace

std::string to_string(Grouping g) {
  switch (g) {
    case Grouping::gumbel_hard: return "gumbel-hard";
    case Grouping::soft_cross_attn: return "soft-cross-attn";
    case Grouping::none: return "none";
  }
  return "?";
}

Grouping grouping_from_string(const std::string& s) {
  if (s == "gumbel-hard") return Grouping::gumbel_hard;
  if (s == "soft-cross-attn") return Grouping::soft_cross_attn;
  if (s == "none") return Grouping::none;
  throw ConfigError("unknown grouping \"" + s + "\" (gumbel-hard | soft-cross-attn | none)");
}

void ExperimentConfig::validate() const {
  scene.validate();
  model.encoder.validate();
  const auto& m = model;
  if (m.num_queries == 0 || m.hidden_dim == 0 || m.heads == 0 || m.ffn_dim == 0) {
    throw ConfigError("model: num_queries, hidden_dim, heads and ffn_dim must be positive");
  }
  if (m.hidden_dim % m.heads != 0) throw ConfigError("model: hidden_dim must be divisible by heads");
  if (m.hidden_dim % 4 != 0) throw ConfigError("model: hidden_dim must be divisible by 4 (2-D positional encoding)");
  if (!(m.gumbel_tau > 0.0)) throw ConfigError("model: gumbel_tau must be positive");
  if (scene.max_objects > m.num_queries) throw ConfigError("model: num_queries must cover max_objects");
  if (loss.cls < 0 || loss.mask < 0 || loss.pac < 0 || loss.no_object < 0) {
    throw ConfigError("loss: weights must be non-negative");
  }
  const auto& t = train;
  if (!(t.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (t.weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0 && t.beta2 >= 0.0 && t.beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(t.adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
  if (t.batch_size == 0) throw ConfigError("train: batch_size must be positive");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  FieldReader top(j, "config");
  top.read("dataset_size", c.dataset_size);
  if (const json* s = top.object("scene")) {
    FieldReader r(*s, "scene");
    r.read("height", c.scene.height);
    r.read("width", c.scene.width);
    r.read("num_categories", c.scene.num_categories);
    r.read("max_objects", c.scene.max_objects);
    r.read("offscreen_prob", c.scene.offscreen_prob);
    r.read("silent_prob", c.scene.silent_prob);
    r.read("noise_sigma", c.scene.noise_sigma);
    r.finish();
  }
  if (const json* s = top.object("model")) {
    FieldReader r(*s, "model");
    r.read("num_queries", c.model.num_queries);
    r.read("hidden_dim", c.model.hidden_dim);
    r.read("decoder_repeats", c.model.decoder_repeats);
    r.read("heads", c.model.heads);
    r.read("ffn_dim", c.model.ffn_dim);
    r.read("gumbel_tau", c.model.gumbel_tau);
    r.read("visual_channels", c.model.encoder.visual_channels);
    r.read("audio_channels", c.model.encoder.audio_channels);
    r.read("audio_rows", c.model.encoder.audio_rows);
    r.read("audio_noise_sigma", c.model.encoder.audio_noise_sigma);
    r.finish();
  }
  if (const json* s = top.object("loss")) {
    FieldReader r(*s, "loss");
    r.read("cls", c.loss.cls);
    r.read("mask", c.loss.mask);
    r.read("pac", c.loss.pac);
    r.read("no_object", c.loss.no_object);
    r.finish();
  }
  if (const json* s = top.object("train")) {
    FieldReader r(*s, "train");
    r.read("learning_rate", c.train.learning_rate);
    r.read("weight_decay", c.train.weight_decay);
    r.read("beta1", c.train.beta1);
    r.read("beta2", c.train.beta2);
    r.read("adam_eps", c.train.adam_eps);
    r.read("iterations", c.train.iterations);
    r.read("batch_size", c.train.batch_size);
    r.read("seed", c.train.seed);
    r.read("eval_every", c.train.eval_every);
    r.read("checkpoint_every", c.train.checkpoint_every);
    r.finish();
  }
  if (const json* s = top.object("flags")) {
    FieldReader r(*s, "flags");
    r.read("use_act_baseline", c.flags.use_act_baseline);
    r.read("use_pac_loss", c.flags.use_pac_loss);
    r.read("use_prototypes", c.flags.use_prototypes);
    std::string grouping = to_string(c.flags.grouping);
    r.read("grouping", grouping);
    c.flags.grouping = grouping_from_string(grouping);
    r.read("aux_losses", c.flags.aux_losses);
    r.read("gumbel_at_eval", c.flags.gumbel_at_eval);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  return {
      {"dataset_size", c.dataset_size},
      {"scene",
       {{"height", c.scene.height},
        {"width", c.scene.width},
        {"num_categories", c.scene.num_categories},
        {"max_objects", c.scene.max_objects},
        {"offscreen_prob", c.scene.offscreen_prob},
        {"silent_prob", c.scene.silent_prob},
        {"noise_sigma", c.scene.noise_sigma}}},
      {"model",
       {{"num_queries", c.model.num_queries},
        {"hidden_dim", c.model.hidden_dim},
        {"decoder_repeats", c.model.decoder_repeats},
        {"heads", c.model.heads},
        {"ffn_dim", c.model.ffn_dim},
        {"gumbel_tau", c.model.gumbel_tau},
        {"visual_channels", c.model.encoder.visual_channels},
        {"audio_channels", c.model.encoder.audio_channels},
        {"audio_rows", c.model.encoder.audio_rows},
        {"audio_noise_sigma", c.model.encoder.audio_noise_sigma}}},
      {"loss",
       {{"cls", c.loss.cls}, {"mask", c.loss.mask}, {"pac", c.loss.pac}, {"no_object", c.loss.no_object}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"iterations", c.train.iterations},
        {"batch_size", c.train.batch_size},
        {"seed", c.train.seed},
        {"eval_every", c.train.eval_every},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"flags",
       {{"use_act_baseline", c.flags.use_act_baseline},
        {"use_pac_loss", c.flags.use_pac_loss},
        {"use_prototypes", c.flags.use_prototypes},
        {"grouping", to_string(c.flags.grouping)},
        {"aux_losses", c.flags.aux_losses},
        {"gumbel_at_eval", c.flags.gumbel_at_eval}}},
  };
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig desk_preset() { return ExperimentConfig{}; }

ExperimentConfig full_scale_preset() {
  ExperimentConfig c;
  c.scene.height = 224;
  c.scene.width = 224;
  c.model.num_queries = 100;
  c.model.hidden_dim = 256;
  c.model.ffn_dim = 1024;
  c.model.heads = 8;
  c.model.encoder.audio_rows = 24;
  c.model.encoder.audio_channels = 128;
  c.train.batch_size = 16;
  c.train.iterations = 45000;
  return c;
}

}  // namespace vct
