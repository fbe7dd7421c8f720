#pragma once

#include <cstdint>
#include <optional>

#include <json.hpp>

#include "bagclr/data.hpp"
#include "bagclr/encoder.hpp"
#include "bagclr/evidence.hpp"
#include "bagclr/optim.hpp"
#include "bagclr/projector.hpp"
#include "bagclr/schedule.hpp"

namespace bagclr {

using json = nlohmann::json;

struct ModelConfig {
  EncoderConfig encoder;
  ProjectorConfig projector;
  int n_classes = 0;  // 0: no evidence head attached
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(json& j, const EncoderConfig& c);
void from_json(const json& j, EncoderConfig& c);
void to_json(json& j, const ProjectorConfig& c);
void from_json(const json& j, ProjectorConfig& c);
void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);
void to_json(json& j, const OptimizerConfig& c);
void from_json(const json& j, OptimizerConfig& c);
void to_json(json& j, const StagePlan& p);
void from_json(const json& j, StagePlan& p);
void to_json(json& j, const AugmentConfig& c);
void from_json(const json& j, AugmentConfig& c);

/// Encoder + projector, with the evidence head once attached.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  Encoder<float> encoder;
  Projector<float> projector;
  std::optional<EvidenceHead<float>> head;

  // Current architecture (projector width and head follow anneal/attach).
  ModelConfig config() const;

  // Replaces the projector's output layer with a fresh 2-D one.
  void anneal_to_2d(std::uint64_t seed);
  void attach_head(int n_classes, std::uint64_t seed);

  // Eval-mode z = g(GAP(h(x))); each row depends on its own image only.
  Tensor<float> embed(const Tensor<float>& images) const;

  ParameterList<float> parameters();
  ParameterList<float> encoder_parameters();
  BufferList<float> buffers();

 private:
  ModelConfig base_;
};

/// FNV-1a over parameter names and raw bytes.
std::uint64_t checksum(const ParameterList<float>& params);

}  // namespace bagclr
