#include "vct/checkpoint.hpp"

#include <algorithm>
#include <map>

#include "vct/tensor_io.hpp"

namespace vct {
namespace {

using nlohmann::json;

constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kMaxManifest = std::size_t{1} << 28;

void append_group(const char* group, const NamedTensors& tensors, json& index, std::vector<std::uint8_t>& data) {
  for (const auto& [name, t] : tensors) {
    const std::size_t offset = data.size();
    append_tensor(data, t);
    index.push_back({{"group", group}, {"name", name}, {"offset", offset}, {"length", data.size() - offset}});
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  json index = json::array();
  std::vector<std::uint8_t> data;
  append_group("param", c.parameters, index, data);
  append_group("adam_m", c.adam_m, index, data);
  append_group("adam_v", c.adam_v, index, data);
  const json manifest = {{"format", "vct-checkpoint"},
                         {"config", config_to_json(c.config)},
                         {"iteration", c.iteration},
                         {"adam_step", c.adam_step},
                         {"extra", c.extra},
                         {"tensors", index}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out{'V', 'C', 'T', 'C'};
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(bytes.begin(), bytes.begin() + 4, "VCTC")) {
    throw FormatError("checkpoint: bad magic");
  }
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(bytes, pos);
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t len = get_u64(bytes, pos);
  if (len > kMaxManifest || len > bytes.size() - pos) throw FormatError("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + pos, bytes.begin() + pos + len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  const auto data = bytes.subspan(pos + len);

  Checkpoint c;
  try {
    if (manifest.at("format") != "vct-checkpoint") throw FormatError("checkpoint: not a vct checkpoint");
    try {
      c.config = config_from_json(manifest.at("config"));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint: invalid config snapshot: ") + e.what());
    }
    c.iteration = manifest.at("iteration").get<std::size_t>();
    c.adam_step = manifest.at("adam_step").get<std::uint64_t>();
    c.extra = manifest.at("extra");
    std::size_t expected_offset = 0;
    for (const auto& e : manifest.at("tensors")) {
      const std::string group = e.at("group").get<std::string>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t length = e.at("length").get<std::size_t>();
      if (offset != expected_offset || length > data.size() - std::min(offset, data.size())) {
        throw FormatError("checkpoint: tensor index out of bounds");
      }
      std::size_t p = 0;
      auto t = decode_tensor<float>(data.subspan(offset, length), p);
      if (p != length) throw FormatError("checkpoint: tensor length mismatch");
      expected_offset = offset + length;
      auto entry = std::make_pair(e.at("name").get<std::string>(), std::move(t));
      if (group == "param") c.parameters.push_back(std::move(entry));
      else if (group == "adam_m") c.adam_m.push_back(std::move(entry));
      else if (group == "adam_v") c.adam_v.push_back(std::move(entry));
      else throw FormatError("checkpoint: unknown tensor group " + group);
    }
    if (expected_offset != data.size()) throw FormatError("checkpoint: trailing bytes");
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest field: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

NamedTensors snapshot(const ParameterStore<float>& store) {
  NamedTensors out;
  for (const auto& [name, t] : store.entries()) out.emplace_back(name, t.detach().clone());
  return out;
}

void restore(ParameterStore<float>& store, const NamedTensors& values) {
  if (values.size() != store.size()) {
    throw FormatError("checkpoint holds " + std::to_string(values.size()) + " parameters, model has " +
                      std::to_string(store.size()));
  }
  for (const auto& [name, v] : values) {
    if (!store.contains(name)) throw FormatError("checkpoint parameter " + name + " is not in the model");
    Tensor<float> dst = store.get(name);
    if (dst.dims() != v.dims()) {
      throw FormatError("checkpoint parameter " + name + " has shape " + shape_string(v.dims()) +
                        ", model expects " + shape_string(dst.dims()));
    }
    std::copy(v.values().begin(), v.values().end(), dst.mutable_values().begin());
  }
}

}  // namespace vct
