#include "bagclr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bagclr {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

void add_tensor(std::vector<NamedTensor>& out, const std::string& name, const Tensor<float>& t) {
  out.push_back({name, t.shape(), t.storage()});
}

void copy_into(Tensor<float>& dst, const NamedTensor& src) {
  if (src.shape != dst.shape())
    throw ShapeError("checkpoint tensor " + src.name + " has shape " + shape_string(src.shape) +
                     ", model expects " + shape_string(dst.shape()));
  dst.storage() = src.data;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

ModelConfig Checkpoint::model_config() const {
  if (!config.contains("model")) throw DataError("checkpoint header has no model config");
  return config.at("model").get<ModelConfig>();
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  json header;
  header["format_version"] = ckpt.format_version;
  header["stage"] = ckpt.stage;
  header["epoch"] = ckpt.epoch;
  header["config"] = ckpt.config;
  header["rng_state"] = ckpt.rng_state;
  header["optimizer"] = ckpt.optimizer;
  json list = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (Tensor<float>::count(t.shape) != t.data.size())
      throw ShapeError("tensor " + t.name + ": shape does not match data length");
    list.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size() * 4;
  }
  header["tensors"] = list;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(Checkpoint::kMagic, Checkpoint::kMagic + 8);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors)
    for (float v : t.data) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), Checkpoint::kMagic, 8) != 0)
    throw DataError("not a checkpoint file (bad magic)");
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (hlen > bytes.size() - 16) throw DataError("truncated checkpoint header");
  const json header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);

  Checkpoint c;
  c.format_version = header.at("format_version").get<int>();
  if (c.format_version != Checkpoint::kFormatVersion)
    throw DataError("unsupported checkpoint format version " + std::to_string(c.format_version));
  c.stage = header.at("stage").get<int>();
  c.epoch = header.at("epoch").get<int>();
  c.config = header.at("config");
  c.rng_state = header.at("rng_state").get<std::string>();
  c.optimizer = header.at("optimizer");
  const std::size_t base = 16 + hlen;
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::size_t n = Tensor<float>::count(t.shape);
    const std::size_t at = base + entry.at("offset").get<std::size_t>();
    if (at + 4 * n > bytes.size()) throw DataError("truncated checkpoint tensor " + t.name);
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[at + 4 * i + b]) << (8 * b);
      t.data[i] = std::bit_cast<float>(bits);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write then rename so an interrupted save never leaves a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& state) {
  std::mt19937_64 rng;
  if (!state.empty()) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw DataError("corrupt rng state in checkpoint");
  }
  return rng;
}

Checkpoint capture(Model& model, int stage, int epoch, const json& run_config,
                   const std::mt19937_64& rng, const Optimizer* optimizer) {
  Checkpoint c;
  c.stage = stage;
  c.epoch = epoch;
  c.config = run_config.is_object() ? run_config : json::object();
  c.config["model"] = model.config();
  c.rng_state = rng_to_string(rng);
  for (auto* p : model.parameters()) add_tensor(c.tensors, p->name, p->value);
  for (auto* b : model.buffers()) add_tensor(c.tensors, b->name, b->value);
  if (optimizer) {
    json steps = json::object();
    for (const auto& [name, slot] : optimizer->slots()) {
      steps[name] = slot.steps;
      add_tensor(c.tensors, "optimizer/" + name + "/first", slot.first);
      if (!slot.second.empty()) add_tensor(c.tensors, "optimizer/" + name + "/second", slot.second);
    }
    c.optimizer = {{"config", optimizer->config()}, {"steps", steps}};
  }
  return c;
}

void load_weights(Model& model, const Checkpoint& ckpt) {
  auto load = [&](const std::string& name, Tensor<float>& dst) {
    const NamedTensor* t = ckpt.find(name);
    if (!t) throw DataError("checkpoint lacks tensor " + name);
    copy_into(dst, *t);
  };
  for (auto* p : model.parameters()) load(p->name, p->value);
  for (auto* b : model.buffers()) load(b->name, b->value);
}

Model restore_model(const Checkpoint& ckpt) {
  Model model(ckpt.model_config());
  load_weights(model, ckpt);
  return model;
}

Optimizer restore_optimizer(const Checkpoint& ckpt) {
  if (ckpt.optimizer.is_null()) throw DataError("checkpoint carries no optimizer state");
  Optimizer opt(ckpt.optimizer.at("config").get<OptimizerConfig>());
  for (const auto& [name, steps] : ckpt.optimizer.at("steps").items()) {
    Optimizer::Slot slot;
    slot.steps = steps.get<std::int64_t>();
    const NamedTensor* first = ckpt.find("optimizer/" + name + "/first");
    if (!first) throw DataError("checkpoint lacks optimizer moment for " + name);
    slot.first = Tensor<float>(first->shape);
    slot.first.storage() = first->data;
    if (const NamedTensor* second = ckpt.find("optimizer/" + name + "/second")) {
      slot.second = Tensor<float>(second->shape);
      slot.second.storage() = second->data;
    }
    opt.slots()[name] = std::move(slot);
  }
  return opt;
}

}  // namespace bagclr
