#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bagclr/model.hpp"

namespace bagclr {

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// In-memory image of a checkpoint file. The on-disk layout is described in
/// docs/checkpoint_format.md.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  static constexpr char kMagic[9] = "BCLRCKPT";

  int format_version = kFormatVersion;
  int stage = 0;
  int epoch = 0;       // completed epochs within the stage
  json config;         // resolved run config; config["model"] is the architecture
  std::string rng_state;
  json optimizer;      // {"config": ..., "steps": {param: n}} or null
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  ModelConfig model_config() const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& state);

/// Snapshot of the model parameters, running statistics and, when given, the
/// optimizer moments. `run_config` is copied and its "model" entry replaced by
/// the current architecture.
Checkpoint capture(Model& model, int stage, int epoch, const json& run_config,
                   const std::mt19937_64& rng, const Optimizer* optimizer = nullptr);

/// Rebuilds the architecture from the header and loads every tensor.
Model restore_model(const Checkpoint& ckpt);
/// Loads parameters and buffers into an existing model of matching shape.
void load_weights(Model& model, const Checkpoint& ckpt);
/// Rebuilds the optimizer moments. Throws if the checkpoint has none.
Optimizer restore_optimizer(const Checkpoint& ckpt);

}  // namespace bagclr
