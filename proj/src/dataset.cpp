#include "vct/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "vct/tensor_io.hpp"

namespace vct {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string numbered(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu.vct", stem, i);
  return buf;
}

std::string mask_name(std::size_t i, std::size_t j) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "mask_%04zu_%02zu.vct", i, j);
  return buf;
}

json scene_to_json(const SceneConfig& c) {
  return {{"height", c.height},           {"width", c.width},
          {"num_categories", c.num_categories}, {"max_objects", c.max_objects},
          {"offscreen_prob", c.offscreen_prob}, {"silent_prob", c.silent_prob},
          {"noise_sigma", c.noise_sigma}};
}

SceneConfig scene_from_json(const json& j) {
  SceneConfig c;
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.num_categories = j.at("num_categories").get<std::size_t>();
  c.max_objects = j.at("max_objects").get<std::size_t>();
  c.offscreen_prob = j.at("offscreen_prob").get<double>();
  c.silent_prob = j.at("silent_prob").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  return c;
}

[[noreturn]] void invalid(const fs::path& file, const std::string& what) {
  throw FormatError(file.string() + ": " + what);
}

}  // namespace

void write_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  json samples = json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const std::string image = numbered("image", i);
    save_tensor(dir / image, Tensor<float>({s.height, s.width, 3}, s.image));
    json masks = json::array(), cats = json::array(), sounding = json::array();
    for (std::size_t j = 0; j < s.objects.size(); ++j) {
      const auto& obj = s.objects[j];
      const std::string name = mask_name(i, j);
      save_tensor(dir / name, Tensor<float>({s.height, s.width},
                                            std::vector<float>(obj.mask.begin(), obj.mask.end())));
      masks.push_back(name);
      cats.push_back(obj.category);
      sounding.push_back(obj.sounding);
    }
    json presence = json::array();
    for (auto m : s.audio_presence) presence.push_back(static_cast<int>(m));
    samples.push_back({{"frame_index", s.frame_index},
                       {"image", image},
                       {"masks", masks},
                       {"categories", cats},
                       {"sounding", sounding},
                       {"audio_presence", presence},
                       {"offscreen", s.offscreen}});
  }
  const json manifest = {{"format", "vct-dataset"},
                         {"version", 1},
                         {"count", data.samples.size()},
                         {"scene", scene_to_json(data.scene)},
                         {"samples", samples}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot create " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    invalid(manifest_path, std::string("malformed JSON: ") + e.what());
  }

  Dataset data;
  try {
    if (manifest.at("format") != "vct-dataset") invalid(manifest_path, "not a vct-dataset manifest");
    data.scene = scene_from_json(manifest.at("scene"));
    data.scene.validate();
    const auto& entries = manifest.at("samples");
    if (!entries.is_array() || entries.size() != manifest.at("count").get<std::size_t>()) {
      invalid(manifest_path, "sample count does not match samples array");
    }
    const std::size_t H = data.scene.height, W = data.scene.width, K = data.scene.num_categories;
    for (const auto& e : entries) {
      Sample s;
      s.frame_index = e.at("frame_index").get<std::size_t>();
      s.height = H;
      s.width = W;
      const fs::path image_path = dir / e.at("image").get<std::string>();
      const auto image = load_tensor<float>(image_path);
      if (image.dims() != Shape{H, W, 3}) {
        invalid(image_path, "image dims " + shape_string(image.dims()) + " disagree with manifest");
      }
      s.image.assign(image.values().begin(), image.values().end());

      const auto& masks = e.at("masks");
      const auto& cats = e.at("categories");
      const auto& sounding = e.at("sounding");
      if (masks.size() != cats.size() || masks.size() != sounding.size()) {
        invalid(manifest_path, "masks/categories/sounding lengths differ");
      }
      std::vector<std::uint8_t> occupied(H * W, 0);
      std::set<std::size_t> seen_cats;
      for (std::size_t j = 0; j < masks.size(); ++j) {
        const fs::path mask_path = dir / masks[j].get<std::string>();
        const auto m = load_tensor<float>(mask_path);
        if (m.dims() != Shape{H, W}) invalid(mask_path, "mask dims " + shape_string(m.dims()) + " disagree");
        SceneObject obj;
        obj.mask.resize(H * W);
        for (std::size_t p = 0; p < H * W; ++p) {
          const float v = m[p];
          if (v != 0.f && v != 1.f) invalid(mask_path, "mask is not binary");
          obj.mask[p] = v != 0.f;
          if (obj.mask[p] && occupied[p]) invalid(mask_path, "mask overlaps another object");
          occupied[p] |= obj.mask[p];
        }
        obj.category = cats[j].get<std::size_t>();
        if (obj.category >= K) invalid(manifest_path, "category out of range");
        if (!seen_cats.insert(obj.category).second) invalid(manifest_path, "duplicate on-screen category");
        obj.sounding = sounding[j].get<bool>();
        s.objects.push_back(std::move(obj));
      }
      const auto& presence = e.at("audio_presence");
      if (presence.size() != K) invalid(manifest_path, "audio_presence length differs from K");
      for (const auto& v : presence) {
        const int b = v.get<int>();
        if (b != 0 && b != 1) invalid(manifest_path, "audio_presence entries must be 0 or 1");
        s.audio_presence.push_back(static_cast<std::uint8_t>(b));
      }
      s.offscreen = e.at("offscreen").get<std::vector<std::size_t>>();
      // M* must be exactly the sounding on-screen categories plus off-screen ones.
      std::vector<std::uint8_t> expect(K, 0);
      for (const auto& obj : s.objects)
        if (obj.sounding) expect[obj.category] = 1;
      for (auto k : s.offscreen) {
        if (k >= K || seen_cats.count(k)) invalid(manifest_path, "off-screen category is on screen");
        expect[k] = 1;
      }
      if (expect != s.audio_presence) invalid(manifest_path, "audio_presence inconsistent with objects");
      data.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    invalid(manifest_path, std::string("bad manifest field: ") + e.what());
  }
  return data;
}

}  // namespace vct
