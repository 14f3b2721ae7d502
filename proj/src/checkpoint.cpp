#include "hgvae/checkpoint.hpp"

#include "hgvae/baseline.hpp"
#include "hgvae/binary_io.hpp"

#include <algorithm>
#include <map>

namespace hgvae {

namespace {
constexpr std::string_view kMagic = "HGV1";
}

std::unique_ptr<GenerativeModel> make_model(const KeyValues& config, std::uint64_t seed) {
  const auto it = config.find("model");
  const std::string kind = it == config.end() ? "hgvae" : it->second;
  if (kind == "hgvae") return std::make_unique<HgVae>(ModelConfig::from_key_values(config), seed);
  if (kind == "vae-baseline") return std::make_unique<BaselineVae>(BaselineConfig::from_key_values(config), seed);
  throw ConfigError("unknown model kind '" + kind + "'");
}

std::string serialize_checkpoint(const GenerativeModel& model) {
  ByteWriter w;
  w.bytes(kMagic);
  w.string(format_key_values(model.describe()));
  const auto& params = model.parameters();
  const auto& buffers = model.buffers();
  w.u64(params.size() + buffers.size());
  for (const auto* list : {&params, &buffers}) {
    for (const auto& [name, value] : *list) {
      w.string(name);
      w.u32(static_cast<std::uint32_t>(value.rank()));
      for (auto d : value.shape()) w.u64(d);
      for (double v : value.data()) w.f64(v);
    }
  }
  return w.take();
}

namespace {

std::unique_ptr<GenerativeModel> read_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw CheckpointError("checkpoint: bad magic, expected HGV1");
  }
  auto model = make_model(parse_key_values(r.string()), 0);

  std::map<std::string, Tensor> slots;
  for (auto* list : {&model->parameters(), &model->buffers()}) {
    for (auto& [name, value] : *list) slots.emplace(name, value);
  }
  const std::uint64_t count = r.u64();
  if (count != slots.size()) {
    throw CheckpointError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(slots.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.string();
    auto slot = slots.find(name);
    if (slot == slots.end()) throw CheckpointError("checkpoint: unexpected tensor '" + name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != slot->second.shape()) {
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + shape_string(shape) +
                            ", model expects " + shape_string(slot->second.shape()));
    }
    auto values = slot->second.mutable_data();
    for (double& v : values) v = r.f64();
    slots.erase(slot);
  }
  if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes after the last tensor");
  return model;
}

}  // namespace

std::unique_ptr<GenerativeModel> deserialize_checkpoint(const std::string& bytes) {
  try {
    return read_checkpoint(bytes);
  } catch (const TruncatedError& e) {
    throw CheckpointError(e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: bad config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const GenerativeModel& model) {
  try {
    write_file_bytes(path.string(), serialize_checkpoint(model));
  } catch (const std::runtime_error& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
}

std::unique_ptr<GenerativeModel> load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path.string());
  } catch (const std::runtime_error& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return deserialize_checkpoint(bytes);
}

}  // namespace hgvae
