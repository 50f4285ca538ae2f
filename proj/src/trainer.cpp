#include "vct/trainer.hpp"

#include <cmath>
#include <fstream>

#include "vct/encoders.hpp"
#include "vct/pgm.hpp"
#include "vct/semantic.hpp"
#include "vct/tensor_io.hpp"

namespace vct {
namespace {

using nlohmann::json;

bool all_finite(const ModelOutput<float>& out) {
  for (const auto& p : out.predictions) {
    for (float v : p.class_logits.values())
      if (!std::isfinite(v)) return false;
    for (float v : p.mask_logits.values())
      if (!std::isfinite(v)) return false;
  }
  return true;
}

constexpr std::uint64_t kTrainStream = 0x545241494EULL;
constexpr std::uint64_t kEvalNoiseStream = 0x4556414CULL;

std::string fixed_json(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::strict); }

}  // namespace

void check_dataset(const ExperimentConfig& cfg, const SceneConfig& data) {
  if (data.num_categories != cfg.scene.num_categories || data.height != cfg.scene.height ||
      data.width != cfg.scene.width) {
    throw ConfigError("dataset has K=" + std::to_string(data.num_categories) + ", " + std::to_string(data.height) +
                      "x" + std::to_string(data.width) + " images; config expects K=" +
                      std::to_string(cfg.scene.num_categories) + ", " + std::to_string(cfg.scene.height) + "x" +
                      std::to_string(cfg.scene.width));
  }
}

std::vector<FeatureSet<float>> extract_features(const ExperimentConfig& cfg, const std::vector<Sample>& samples) {
  const FeatureExtractor extract(cfg.model.encoder, cfg.scene.num_categories, cfg.train.seed);
  std::vector<FeatureSet<float>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto b = extract(s);
    out.push_back({b.v2, b.v3, b.v4, b.v5, b.audio});
  }
  return out;
}

void AdamW::step(ParameterStore<float>& store) {
  ++step_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2, lr = cfg_.learning_rate, wd = cfg_.weight_decay;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (const auto& [name, param] : store.entries()) {
    Tensor<float> p = param;
    if (!p.has_grad()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.size(), 0.f);
      v.assign(p.size(), 0.f);
    }
    const auto g = p.grad();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      const double decayed = w[i] * (1.0 - lr * wd);
      w[i] = static_cast<float>(decayed - lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
    }
  }
}

void AdamW::save(Checkpoint& c) const {
  c.adam_step = step_;
  c.adam_m.clear();
  c.adam_v.clear();
  for (const auto& [name, m] : m_) c.adam_m.emplace_back(name, Tensor<float>({m.size()}, m));
  for (const auto& [name, v] : v_) c.adam_v.emplace_back(name, Tensor<float>({v.size()}, v));
}

void AdamW::load(const Checkpoint& c, const ParameterStore<float>& store) {
  step_ = c.adam_step;
  m_.clear();
  v_.clear();
  auto take = [&](const NamedTensors& src, std::map<std::string, std::vector<float>>& dst) {
    for (const auto& [name, t] : src) {
      if (!store.contains(name) || store.get(name).size() != t.size()) {
        throw FormatError("optimizer state for " + name + " does not match the model");
      }
      dst[name].assign(t.values().begin(), t.values().end());
    }
  };
  take(c.adam_m, m_);
  take(c.adam_v, v_);
  if (m_.size() != v_.size()) throw FormatError("optimizer moments are incomplete");
}

std::vector<std::size_t> predict_labels(const VctModel<float>& model, const Sample& sample,
                                        const FeatureSet<float>& features) {
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  std::optional<Rng> noise;
  if (cfg.flags.gumbel_at_eval) noise = Rng(cfg.train.seed).split(kEvalNoiseStream).split(sample.frame_index);
  const auto out = model.forward(features, sample.audio_presence, noise ? &*noise : nullptr);
  return assemble_semantic_map(out.predictions.back(), sample.height, sample.width);
}

EvalReport evaluate(const VctModel<float>& model, const std::vector<Sample>& samples,
                    const std::vector<FeatureSet<float>>& features) {
  MetricAccumulator acc(model.config().scene.num_categories);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto pred = predict_labels(model, samples[i], features[i]);
    acc.add(pred, samples[i].label_map());
  }
  return acc.report();
}

std::vector<std::size_t> dump_logit_maps(const VctModel<float>& model, const Sample& sample,
                                         const FeatureSet<float>& features, const std::filesystem::path& out_dir) {
  NoGradGuard no_grad;
  std::filesystem::create_directories(out_dir);
  const auto out = model.forward(features, sample.audio_presence, nullptr);
  const auto& pred = out.predictions.back();
  const std::size_t P = pred.height * pred.width;
  std::vector<std::size_t> written;
  for (std::size_t q = 0; q < pred.num_queries(); q += 5) {
    const auto img = logits_to_gray(pred.mask_logits.values().subspan(q * P, P), pred.height, pred.width);
    bool blank = true;
    for (auto p : img.pixels) blank = blank && p == 0;
    if (blank) continue;
    write_pgm(out_dir / ("q" + std::to_string(q) + ".pgm"), img);
    written.push_back(q);
  }
  return written;
}

std::unique_ptr<VctModel<float>> model_from_checkpoint(const Checkpoint& c) {
  auto model = std::make_unique<VctModel<float>>(c.config, c.config.train.seed);
  restore(model->parameters(), c.parameters);
  return model;
}

TrainSummary train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opt) {
  cfg.validate();
  check_dataset(cfg, data.scene);
  const auto& samples = data.samples;
  const std::size_t total = opt.stop_at ? std::min(*opt.stop_at, cfg.train.iterations) : cfg.train.iterations;
  if (samples.empty() && total > 0) throw ConfigError("cannot train on an empty dataset");

  std::filesystem::create_directories(opt.out_dir);
  const auto features = extract_features(cfg, samples);
  std::vector<TargetSet> targets;
  for (const auto& s : samples) targets.push_back(make_targets(s, cfg.v2_height(), cfg.v2_width()));

  VctModel<float> model(cfg, cfg.train.seed);
  auto& store = model.parameters();
  AdamW adam(cfg.train);
  std::size_t start = 0;
  double best = -1.0;
  if (opt.resume) {
    const Checkpoint c = load_checkpoint(*opt.resume);
    if (!opt.force && !(c.config == cfg)) {
      throw ConfigError("resume checkpoint config differs from the run config (use --force to override)");
    }
    restore(store, c.parameters);
    adam.load(c, store);
    start = c.iteration;
    best = c.extra.value("best_m_j", -1.0);
    if (start > total) throw ConfigError("resume checkpoint is past the requested iteration count");
  }

  const auto log_path = opt.out_dir / "train_log.jsonl";
  std::ofstream log(log_path, opt.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path.string());

  auto make_checkpoint = [&](std::size_t iteration) {
    Checkpoint c;
    c.config = cfg;
    c.iteration = iteration;
    c.parameters = snapshot(store);
    adam.save(c);
    c.extra = {{"best_m_j", best}};
    return c;
  };

  TrainSummary summary;
  summary.best_m_j = best;
  const float inv_batch = 1.f / static_cast<float>(cfg.train.batch_size);
  for (std::size_t it = start; it < total; ++it) {
    const Rng it_rng = Rng(cfg.train.seed).split(kTrainStream).split(it);
    Rng pick_rng = it_rng.split(0);
    store.zero_grad();
    double loss = 0, cls = 0, bce = 0, dice = 0, pac = 0;
    auto diverged = [&] {
      return TrainingError("non-finite loss at iteration " + std::to_string(it) + ": cls=" + std::to_string(cls) +
                           " bce=" + std::to_string(bce) + " dice=" + std::to_string(dice) +
                           " pac=" + std::to_string(pac));
    };
    for (std::size_t b = 0; b < cfg.train.batch_size; ++b) {
      const std::size_t idx = pick_rng.below(samples.size());
      Rng noise = it_rng.split(1 + b);
      const auto out = model.forward(features[idx], samples[idx].audio_presence, &noise);
      if (!all_finite(out)) {
        // matching is undefined on non-finite logits
        cls = bce = dice = NAN;
        pac += out.pac.item();
        throw diverged();
      }
      const auto lb = model.loss(out, targets[idx]);
      scale(lb.total, inv_batch).backward();
      loss += lb.total.item();
      cls += lb.cls;
      bce += lb.bce;
      dice += lb.dice;
      pac += lb.pac;
    }
    const double nb = static_cast<double>(cfg.train.batch_size);
    loss /= nb, cls /= nb, bce /= nb, dice /= nb, pac /= nb;
    if (!std::isfinite(loss)) throw diverged();
    adam.step(store);
    log << fixed_json({{"iteration", it + 1}, {"loss", loss}, {"cls", cls}, {"bce", bce}, {"dice", dice},
                       {"pac", pac}})
        << '\n';
    summary.last_loss = loss;

    const bool eval_now = cfg.train.eval_every > 0 && (it + 1) % cfg.train.eval_every == 0;
    if (eval_now) {
      const auto report = evaluate(model, samples, features);
      log << fixed_json({{"iteration", it + 1}, {"train_m_j", report.m_j}, {"train_m_f", report.m_f}}) << '\n';
      if (report.m_j > best) {
        best = report.m_j;
        save_checkpoint(opt.out_dir / "best.ckpt", make_checkpoint(it + 1));
      }
      if (opt.progress) {
        *opt.progress << "iteration " << it + 1 << " loss " << loss << " train M_J " << report.m_j << std::endl;
      }
    }
    if (cfg.train.checkpoint_every > 0 && (it + 1) % cfg.train.checkpoint_every == 0) {
      save_checkpoint(opt.out_dir / ("iter_" + std::to_string(it + 1) + ".ckpt"), make_checkpoint(it + 1));
    }
  }

  summary.iterations = total;
  summary.final_report = evaluate(model, samples, features);
  log << fixed_json({{"iteration", total},
                     {"final_train_m_j", summary.final_report.m_j},
                     {"final_train_m_f", summary.final_report.m_f}})
      << '\n';
  // A run cut short by stop_at leaves the best-so-far state untouched so a
  // resumed run ends exactly like an uninterrupted one.
  if (total == cfg.train.iterations && summary.final_report.m_j > best) {
    best = summary.final_report.m_j;
    save_checkpoint(opt.out_dir / "best.ckpt", make_checkpoint(total));
  }
  summary.best_m_j = best;
  save_checkpoint(opt.out_dir / "final.ckpt", make_checkpoint(total));
  if (!log) throw IoError("write failed: " + log_path.string());
  return summary;
}

}  // namespace vct
