// vct: dataset generation, training, evaluation and logit dumps.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vct/checkpoint.hpp"
#include "vct/config.hpp"
#include "vct/dataset.hpp"
#include "vct/tensor_io.hpp"
#include "vct/trainer.hpp"

namespace fs = std::filesystem;
using namespace vct;

namespace {

bool owned_dataset_file(const fs::path& p) {
  return p.filename() == "manifest.json" || p.extension() == ".vct";
}

int gen_data(const std::string& config_path, const fs::path& out, std::uint64_t seed, bool overwrite) {
  const auto cfg = load_config(config_path);
  if (fs::exists(out) && !fs::is_directory(out)) throw IoError(out.string() + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!overwrite) throw IoError(out.string() + " is not empty (pass --overwrite to replace its dataset)");
    for (const auto& e : fs::directory_iterator(out))
      if (e.is_regular_file() && owned_dataset_file(e.path())) fs::remove(e.path());
  }
  Dataset data{cfg.scene, generate_scenes(cfg.scene, seed, cfg.dataset_size)};
  write_dataset(data, out);

  std::vector<std::size_t> per_category(cfg.scene.num_categories, 0);
  std::size_t with_offscreen = 0, objects = 0;
  for (const auto& s : data.samples) {
    for (const auto& o : s.objects) ++per_category[o.category];
    objects += s.objects.size();
    with_offscreen += !s.offscreen.empty();
  }
  std::cout << "wrote " << data.samples.size() << " samples (" << objects << " objects) to " << out.string() << "\n";
  for (std::size_t k = 0; k < per_category.size(); ++k)
    std::cout << "  category " << k << ": " << per_category[k] << " objects\n";
  const double frac = data.samples.empty() ? 0.0 : double(with_offscreen) / double(data.samples.size());
  std::cout << "  off-screen fraction: " << frac << "\n";
  return 0;
}

int train_cmd(const std::string& config_path, const fs::path& data_dir, const fs::path& out,
              const std::optional<std::string>& resume, bool force) {
  const auto cfg = load_config(config_path);
  const auto data = read_dataset(data_dir);
  TrainOptions opt;
  opt.out_dir = out;
  if (resume) opt.resume = *resume;
  opt.force = force;
  opt.progress = &std::cout;
  const auto s = train(cfg, data, opt);
  std::cout << "trained " << s.iterations << " iterations; last loss " << s.last_loss << "; train M_J "
            << s.final_report.m_j << " (best " << s.best_m_j << ")\n";
  return 0;
}

int eval_cmd(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& report_path) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto data = read_dataset(data_dir);
  check_dataset(ckpt.config, data.scene);
  const auto model = model_from_checkpoint(ckpt);
  const auto report = evaluate(*model, data.samples, extract_features(ckpt.config, data.samples));
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + report_path.string());
  out << report.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + report_path.string());
  std::cout << "M_J " << report.m_j << "  M_F " << report.m_f << "  (" << report.n_samples << " samples)\n";
  return 0;
}

int dump_cmd(const fs::path& ckpt_path, const fs::path& data_dir, std::size_t index, const fs::path& out) {
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto data = read_dataset(data_dir);
  check_dataset(ckpt.config, data.scene);
  if (index >= data.samples.size()) {
    throw ConfigError("sample " + std::to_string(index) + " out of range (dataset has " +
                      std::to_string(data.samples.size()) + ")");
  }
  const auto model = model_from_checkpoint(ckpt);
  const std::vector<Sample> one{data.samples[index]};
  const auto written = dump_logit_maps(*model, one[0], extract_features(ckpt.config, one)[0], out);
  std::cout << "wrote " << written.size() << " logit maps to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision-centric audio-visual segmentation toolkit"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt, report;
  std::uint64_t seed = 0;
  bool overwrite = false, force = false;
  std::size_t sample = 0;
  std::string resume;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_flag("--overwrite", overwrite, "Replace an existing dataset in --out");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Experiment config (JSON)")->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Output directory for logs and checkpoints")->required();
  tr->add_option("--resume", resume, "Continue from a checkpoint");
  tr->add_flag("--force", force, "Allow resuming with a different config");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--report", report, "Report JSON path")->required();

  auto* dl = app.add_subcommand("dump-logits", "Write per-query mask maps as PGM files");
  dl->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  dl->add_option("--data", data, "Dataset directory")->required();
  dl->add_option("--sample", sample, "Sample index")->required();
  dl->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return gen_data(config, out, seed, overwrite);
    if (tr->parsed()) {
      return train_cmd(config, data, out, resume.empty() ? std::nullopt : std::optional<std::string>(resume), force);
    }
    if (ev->parsed()) return eval_cmd(ckpt, data, report);
    if (dl->parsed()) return dump_cmd(ckpt, data, sample, out);
  } catch (const std::exception& e) {
    std::cerr << "vct: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
