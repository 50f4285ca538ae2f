#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "vct/checkpoint.hpp"
#include "vct/config.hpp"
#include "vct/dataset.hpp"
#include "vct/metrics.hpp"
#include "vct/pgm.hpp"
#include "vct/semantic.hpp"
#include "vct/tensor_io.hpp"
#include "vct/trainer.hpp"

using namespace vct;
using namespace vct::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vct_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + VCT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig small_run_config() {
  auto cfg = tiny_config();
  cfg.dataset_size = 3;
  cfg.train.iterations = 4;
  cfg.train.eval_every = 2;
  cfg.train.batch_size = 2;
  cfg.train.learning_rate = 1e-3;
  return cfg;
}

void write_config(const fs::path& p, const ExperimentConfig& cfg) {
  std::ofstream(p) << config_to_json(cfg).dump(2);
}

Dataset small_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {cfg.scene, generate_scenes(cfg.scene, seed, cfg.dataset_size)};
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const auto c = config_from_json(json::object());
  CHECK(c == ExperimentConfig{});
  CHECK(c.train.learning_rate == 1e-4);
  CHECK(c.loss.cls == 2.0);
  CHECK(c.loss.mask == 5.0);
  CHECK(c.loss.pac == 1.0);
  CHECK(c.model.num_queries == 16);
  CHECK(c.model.hidden_dim == 64);
  CHECK(c.scene.height == 64);
  CHECK(c == desk_preset());

  auto t = tiny_config();
  t.flags.grouping = Grouping::soft_cross_attn;
  t.flags.gumbel_at_eval = true;
  CHECK(config_from_json(config_to_json(t)) == t);
  const auto full = full_scale_preset();
  CHECK(config_from_json(config_to_json(full)) == full);
  CHECK(full.model.num_queries == 100);
  CHECK(full.model.hidden_dim == 256);
  CHECK(full.model.encoder.audio_rows == 24);

  const auto partial = config_from_json(json::parse(R"({"train": {"iterations": 5}, "flags": {"grouping": "none"}})"));
  CHECK(partial.train.iterations == 5);
  CHECK(partial.train.batch_size == 2);
  CHECK(partial.flags.grouping == Grouping::none);
}

TEST_CASE("config rejects unknown and malformed fields") {
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"bogus": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"num_querys": 4}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"iterations": "many"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"flags": {"grouping": "fuzzy"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"scene": {"height": 40}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"hidden_dim": 30, "heads": 4}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse("[1, 2]")), ConfigError);
  try {
    config_from_json(json::parse(R"({"loss": {"lambda": 3}})"));
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lambda") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto cfg = tiny_config();
  const VctModel<float> model(cfg, 3);
  Checkpoint c;
  c.config = cfg;
  c.iteration = 17;
  c.parameters = snapshot(model.parameters());
  c.adam_step = 17;
  c.adam_m = {{"a", Tensor<float>({2}, {1.f, -0.f})}};
  c.adam_v = {{"a", Tensor<float>({2}, {3e-41f, 7.f})}};
  c.extra = {{"best_m_j", 0.25}};
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == c.config);
  CHECK(back.iteration == 17);
  CHECK(back.adam_step == 17);
  CHECK(back.extra == c.extra);
  REQUIRE(back.parameters.size() == c.parameters.size());
  for (std::size_t i = 0; i < c.parameters.size(); ++i) {
    CHECK(back.parameters[i].first == c.parameters[i].first);
    CHECK(back.parameters[i].second.dims() == c.parameters[i].second.dims());
    CHECK(std::memcmp(back.parameters[i].second.values().data(), c.parameters[i].second.values().data(),
                      c.parameters[i].second.size() * sizeof(float)) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);

  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "a.ckpt", c);
  CHECK(read_file(dir / "a.ckpt") == bytes);
  CHECK(encode_checkpoint(load_checkpoint(dir / "a.ckpt")) == bytes);

  VctModel<float> other(cfg, 4);
  restore(other.parameters(), back.parameters);
  CHECK(encode_checkpoint([&] {
          Checkpoint d = c;
          d.parameters = snapshot(other.parameters());
          return d;
        }()) == bytes);
  fs::remove_all(dir);
}

TEST_CASE("corrupted checkpoints raise FormatError") {
  const auto cfg = tiny_config();
  const VctModel<float> model(cfg, 3);
  Checkpoint c;
  c.config = cfg;
  c.parameters = snapshot(model.parameters());
  const auto bytes = encode_checkpoint(c);
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{40}, bytes.size() / 2,
                        bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes.data(), n)), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[20] = '#';  // inside the manifest JSON
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[bytes.size() - 1 - 4 * 3] ^= 0xFF;  // payload bytes are not validated, so this still decodes
  CHECK_NOTHROW(decode_checkpoint(bad));

  // Random byte flips never crash.
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    auto f = bytes;
    for (int k = 0; k < 3; ++k) f[rng.below(f.size())] ^= std::uint8_t(1 + rng.below(255));
    try {
      decode_checkpoint(f);
    } catch (const FormatError&) {
    } catch (const ConfigError&) {
    }
  }

  // Restoring into a differently shaped model.
  auto wide = cfg;
  wide.model.hidden_dim = 12;
  wide.model.heads = 2;
  VctModel<float> other(wide, 3);
  CHECK_THROWS_AS(restore(other.parameters(), c.parameters), FormatError);
  auto act = cfg;
  act.flags.use_act_baseline = true;
  VctModel<float> baseline(act, 3);
  CHECK_THROWS_AS(restore(baseline.parameters(), c.parameters), FormatError);
  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "vct_no_such.ckpt"), IoError);
}

TEST_CASE("PGM round trip and quantisation") {
  GrayImage img{5, 3, {}};
  for (std::size_t i = 0; i < 15; ++i) img.pixels.push_back(std::uint8_t(i * 17));
  const auto bytes = encode_pgm(img);
  const std::string header = "P5\n5 3\n255\n";
  CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
  CHECK(decode_pgm(bytes) == img);

  const std::string commented = "P5 # comment\n5\t3 # size\n255\n";
  std::vector<std::uint8_t> alt(commented.begin(), commented.end());
  alt.insert(alt.end(), img.pixels.begin(), img.pixels.end());
  CHECK(decode_pgm(alt) == img);

  const auto dir = scratch("pgm");
  write_pgm(dir / "x.pgm", img);
  CHECK(read_pgm(dir / "x.pgm") == img);
  fs::remove_all(dir);

  const std::vector<float> zeros(12, 0.f);
  const auto gray = logits_to_gray(zeros, 3, 4);
  CHECK(gray.width == 4);
  CHECK(gray.height == 3);
  for (auto p : gray.pixels) CHECK((p == 127 || p == 128));
  const std::vector<float> ext{-100.f, 100.f};
  CHECK(logits_to_gray(ext, 1, 2).pixels == std::vector<std::uint8_t>{0, 255});
}

TEST_CASE("malformed PGM raises FormatError") {
  GrayImage img{2, 2, {1, 2, 3, 4}};
  const auto bytes = encode_pgm(img);
  for (std::size_t n = 0; n < bytes.size(); ++n) CHECK_THROWS_AS(decode_pgm(std::span(bytes.data(), n)), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_pgm(extra), FormatError);
  for (const std::string bad : {"P2\n2 2\n255\n", "P5\n2 2\n0\n", "P5\n2 2\n256\n", "P5\n-2 2\n255\n", "P5\nx 2\n255\n"}) {
    std::vector<std::uint8_t> b(bad.begin(), bad.end());
    b.insert(b.end(), 4, 1);
    CHECK_THROWS_AS(decode_pgm(b), FormatError);
  }
  const std::string small = "P5\n2 2\n3\n";
  std::vector<std::uint8_t> b(small.begin(), small.end());
  b.insert(b.end(), {0, 1, 2, 9});
  CHECK_THROWS_AS(decode_pgm(b), FormatError);  // sample above maxval
}

TEST_CASE("zero iterations leave the initialisation") {
  auto cfg = small_run_config();
  cfg.train.iterations = 0;
  const auto dir = scratch("zero");
  const auto s = train(cfg, small_dataset(cfg, 5), TrainOptions{dir, {}, false, {}, nullptr});
  CHECK(s.iterations == 0);
  const auto c = load_checkpoint(dir / "final.ckpt");
  CHECK(c.iteration == 0);
  CHECK(c.adam_step == 0);
  const VctModel<float> init(cfg, cfg.train.seed);
  const auto want = snapshot(init.parameters());
  REQUIRE(c.parameters.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < want[i].second.size(); ++j) CHECK(c.parameters[i].second[j] == want[i].second[j]);
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic and resuming matches an uninterrupted run") {
  auto cfg = small_run_config();
  cfg.train.iterations = 6;
  cfg.train.checkpoint_every = 3;
  const auto data = small_dataset(cfg, 8);
  const auto a = scratch("run_a"), b = scratch("run_b"), c = scratch("run_c");
  train(cfg, data, TrainOptions{a, {}, false, {}, nullptr});
  train(cfg, data, TrainOptions{b, {}, false, {}, nullptr});
  for (const char* f : {"final.ckpt", "best.ckpt", "iter_3.ckpt", "iter_6.ckpt", "train_log.jsonl"})
    CHECK(slurp(a / f) == slurp(b / f));

  train(cfg, data, TrainOptions{c, {}, false, 3, nullptr});
  CHECK(load_checkpoint(c / "final.ckpt").iteration == 3);
  train(cfg, data, TrainOptions{c, c / "final.ckpt", false, {}, nullptr});
  CHECK(slurp(a / "final.ckpt") == slurp(c / "final.ckpt"));
  CHECK(slurp(a / "best.ckpt") == slurp(c / "best.ckpt"));

  auto other = cfg;
  other.train.learning_rate = 5e-3;
  CHECK_THROWS_AS(train(other, data, TrainOptions{c, a / "iter_3.ckpt", false, {}, nullptr}), ConfigError);
  CHECK_NOTHROW(train(other, data, TrainOptions{c, a / "iter_3.ckpt", true, {}, nullptr}));

  std::ifstream log(a / "train_log.jsonl");
  std::string line;
  std::size_t steps = 0, evals = 0;
  while (std::getline(log, line)) {
    const auto j = json::parse(line);
    steps += j.contains("loss");
    evals += j.contains("train_m_j");
    if (j.contains("loss"))
      for (const char* k : {"cls", "bce", "dice", "pac"}) CHECK(j.contains(k));
  }
  CHECK(steps == 6);
  CHECK(evals == 3);
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("every flag changes a logged value") {
  auto base = small_run_config();
  base.train.iterations = 2;
  base.train.eval_every = 1;
  const auto data = small_dataset(base, 9);
  auto run = [&](const ExperimentConfig& cfg) {
    const auto dir = scratch("flag");
    const auto s = train(cfg, data, TrainOptions{dir, {}, false, {}, nullptr});
    return slurp(dir / "train_log.jsonl") + s.final_report.to_json().dump();
  };
  const auto ref = run(base);
  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  auto add = [&](const std::string& name, auto edit) {
    auto c = base;
    edit(c.flags);
    variants.emplace_back(name, c);
  };
  add("use_act_baseline", [](ModelFlags& f) { f.use_act_baseline = true; });
  add("use_pac_loss", [](ModelFlags& f) { f.use_pac_loss = false; });
  add("use_prototypes", [](ModelFlags& f) { f.use_prototypes = false; });
  add("grouping=soft", [](ModelFlags& f) { f.grouping = Grouping::soft_cross_attn; });
  add("grouping=none", [](ModelFlags& f) { f.grouping = Grouping::none; });
  add("aux_losses", [](ModelFlags& f) { f.aux_losses = false; });
  for (const auto& [name, cfg] : variants) {
    INFO(name);
    CHECK(run(cfg) != ref);
  }
  fs::remove_all(fs::temp_directory_path() / "vct_harness_flag");
}

TEST_CASE("single-category scenes train and evaluate") {
  auto cfg = small_run_config();
  cfg.scene.num_categories = 1;
  cfg.scene.max_objects = 1;
  cfg.dataset_size = 4;
  cfg.validate();
  const auto data = small_dataset(cfg, 11);
  const auto dir = scratch("single_category");
  const auto s = train(cfg, data, TrainOptions{dir, {}, false, {}, nullptr});
  CHECK(std::isfinite(s.last_loss));
  CHECK(s.final_report.per_category_iou.size() == 1);
  CHECK((s.final_report.m_j >= 0.0 && s.final_report.m_j <= 1.0));
  const auto model = model_from_checkpoint(load_checkpoint(dir / "final.ckpt"));
  for (const auto& sample : data.samples) {
    const auto labels = predict_labels(*model, sample, extract_features(cfg, {sample})[0]);
    for (auto l : labels) CHECK(l <= 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("gumbel noise at evaluation changes predicted labels") {
  auto cfg = small_run_config();
  cfg.dataset_size = 8;
  // at init the grouping logits are flat enough for the noise to move the argmax
  cfg.train.iterations = 0;
  const auto data = small_dataset(cfg, 12);
  const auto dir = scratch("gumbel_eval");
  train(cfg, data, TrainOptions{dir, {}, false, {}, nullptr});
  auto ckpt = load_checkpoint(dir / "final.ckpt");
  // amplify the grouped term so a changed assignment reaches the labels
  for (auto& [name, t] : ckpt.parameters)
    if (name == "ppqg.group.o.weight")
      for (auto& x : t.mutable_values()) x *= 50.f;
  const auto plain = model_from_checkpoint(ckpt);
  ckpt.config.flags.gumbel_at_eval = true;
  const auto noisy = model_from_checkpoint(ckpt);
  const auto features = extract_features(cfg, data.samples);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto a = predict_labels(*plain, data.samples[i], features[i]);
    const auto b = predict_labels(*noisy, data.samples[i], features[i]);
    CHECK(b == predict_labels(*noisy, data.samples[i], features[i]));
    for (std::size_t p = 0; p < a.size(); ++p) changed += a[p] != b[p];
  }
  CHECK(changed > 0);
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts training with a diagnostic") {
  auto cfg = small_run_config();
  // one Adam step of this size overflows every float activation
  cfg.train.learning_rate = 1e30;
  const auto data = small_dataset(cfg, 10);
  const auto dir = scratch("nan");
  try {
    train(cfg, data, TrainOptions{dir, {}, false, {}, nullptr});
    FAIL("non-finite loss accepted");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    INFO(msg);
    CHECK(msg.find("non-finite loss at iteration 1") != std::string::npos);
    CHECK(msg.find("cls=") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset and config mismatches are rejected") {
  const auto cfg = small_run_config();
  auto scene = cfg.scene;
  scene.num_categories = 4;
  CHECK_THROWS_AS(check_dataset(cfg, scene), ConfigError);
  scene = cfg.scene;
  scene.height = 64;
  CHECK_THROWS_AS(check_dataset(cfg, scene), ConfigError);
  const auto dir = scratch("mismatch");
  CHECK_THROWS_AS(train(cfg, Dataset{scene, {}}, TrainOptions{dir, {}, false, {}, nullptr}), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("ground-truth predictions score perfectly") {
  SceneConfig sc;
  sc.offscreen_prob = 0.5;
  MetricAccumulator acc(sc.num_categories);
  for (const auto& s : generate_scenes(sc, 21, 20)) {
    const auto sounding = s.sounding_objects();
    const std::size_t N = std::max<std::size_t>(1, sounding.size()), K = sc.num_categories, P = s.height * s.width;
    std::vector<double> cls(N * (K + 1), -30.0), mask(N * P, -30.0);
    if (sounding.empty()) cls[K] = 30.0;
    for (std::size_t q = 0; q < sounding.size(); ++q) {
      const auto& obj = s.objects[sounding[q]];
      cls[q * (K + 1) + obj.category] = 30.0;
      for (std::size_t p = 0; p < P; ++p) mask[q * P + p] = obj.mask[p] ? 30.0 : -30.0;
    }
    const Prediction<double> pred{Tensor<double>({N, K + 1}, cls), Tensor<double>({N, P}, mask), s.height, s.width};
    acc.add(assemble_semantic_map(pred, s.height, s.width), s.label_map());
  }
  const auto r = acc.report();
  CHECK(r.m_j == 1.0);
  CHECK(r.m_f == 1.0);
}

TEST_CASE("command line end to end") {
  const auto root = scratch("cli");
  const auto log = root / "out.txt";
  auto cfg = small_run_config();
  write_config(root / "cfg.json", cfg);
  const std::string c = "--config \"" + (root / "cfg.json").string() + "\"";

  REQUIRE(run_cli("gen-data " + c + " --out \"" + (root / "d1").string() + "\" --seed 42", log) == 0);
  REQUIRE(run_cli("gen-data " + c + " --out \"" + (root / "d2").string() + "\" --seed 42", log) == 0);
  CHECK(slurp(log).find("wrote 3 samples") != std::string::npos);
  for (const auto& e : fs::directory_iterator(root / "d1"))
    CHECK(slurp(e.path()) == slurp(root / "d2" / e.path().filename()));

  // refusal, then overwrite that keeps foreign files
  std::ofstream(root / "d1" / "notes.txt") << "keep";
  CHECK(run_cli("gen-data " + c + " --out \"" + (root / "d1").string() + "\" --seed 1", log) == 1);
  CHECK(slurp(log).find("--overwrite") != std::string::npos);
  CHECK(run_cli("gen-data " + c + " --out \"" + (root / "d1").string() + "\" --seed 1 --overwrite", log) == 0);
  CHECK(fs::exists(root / "d1" / "notes.txt"));
  CHECK(read_dataset(root / "d1").samples == generate_scenes(cfg.scene, 1, 3));

  auto empty = cfg;
  empty.dataset_size = 0;
  write_config(root / "empty.json", empty);
  CHECK(run_cli("gen-data --config \"" + (root / "empty.json").string() + "\" --out \"" + (root / "d0").string() +
                    "\" --seed 3",
                log) == 0);
  CHECK(read_dataset(root / "d0").samples.empty());

  auto off = cfg;
  off.scene.offscreen_prob = 1.0;
  write_config(root / "off.json", off);
  CHECK(run_cli("gen-data --config \"" + (root / "off.json").string() + "\" --out \"" + (root / "doff").string() +
                    "\" --seed 3",
                log) == 0);
  CHECK(slurp(log).find("off-screen fraction: 1\n") != std::string::npos);

  std::ofstream(root / "bad.json") << R"({"model": {"unknown_knob": 1}})";
  CHECK(run_cli("gen-data --config \"" + (root / "bad.json").string() + "\" --out \"" + (root / "dx").string() +
                    "\" --seed 3",
                log) == 1);
  CHECK(slurp(log).find("unknown_knob") != std::string::npos);

  const std::string data = " --data \"" + (root / "d2").string() + "\"";
  REQUIRE(run_cli("train " + c + data + " --out \"" + (root / "run").string() + "\"", log) == 0);
  const std::string ckpt = " --ckpt \"" + (root / "run" / "final.ckpt").string() + "\"";
  REQUIRE(run_cli("eval" + ckpt + data + " --report \"" + (root / "r1.json").string() + "\"", log) == 0);
  REQUIRE(run_cli("eval" + ckpt + data + " --report \"" + (root / "r2.json").string() + "\"", log) == 0);
  CHECK(slurp(root / "r1.json") == slurp(root / "r2.json"));
  const auto report = json::parse(slurp(root / "r1.json"));
  CHECK(report["n_samples"].get<int>() == 3);
  CHECK(report["per_category_iou"].size() == cfg.scene.num_categories);

  REQUIRE(run_cli("dump-logits" + ckpt + data + " --sample 1 --out \"" + (root / "maps").string() + "\"", log) == 0);
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(root / "maps")) {
    ++maps;
    const auto name = e.path().filename().string();
    CHECK(name.front() == 'q');
    CHECK(std::stoul(name.substr(1)) % 5 == 0);
    const auto img = read_pgm(e.path());
    CHECK(img.width == cfg.v2_width());
    CHECK(img.height == cfg.v2_height());
  }
  CHECK(maps <= (cfg.model.num_queries + 4) / 5);
  CHECK(run_cli("dump-logits" + ckpt + data + " --sample 9 --out \"" + (root / "maps").string() + "\"", log) == 1);

  auto wrong = cfg;
  wrong.scene.num_categories = 4;
  write_config(root / "wrong.json", wrong);
  CHECK(run_cli("gen-data --config \"" + (root / "wrong.json").string() + "\" --out \"" + (root / "dw").string() +
                    "\" --seed 3",
                log) == 0);
  CHECK(run_cli("eval" + ckpt + " --data \"" + (root / "dw").string() + "\" --report \"" +
                    (root / "r3.json").string() + "\"",
                log) == 1);
  CHECK(run_cli("train " + c + " --data \"" + (root / "dw").string() + "\" --out \"" + (root / "run2").string() + "\"",
                log) == 1);
  fs::remove_all(root);
}
