#include "bagclr/model.hpp"

#include <cstring>

namespace bagclr {

void ModelConfig::validate() const {
  encoder.validate();
  projector.validate();
  if (projector.in_dim != encoder.feature_dim())
    throw ConfigError("projector in_dim " + std::to_string(projector.in_dim) +
                      " does not match encoder feature dim " +
                      std::to_string(encoder.feature_dim()));
  if (n_classes == 1 || n_classes < 0) throw ConfigError("n_classes must be 0 (no head) or >= 2");
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"input_channels", c.input_channels},   {"image_size", c.image_size},
           {"receptive_field", c.receptive_field}, {"stem_channels", c.stem_channels},
           {"stage_channels", c.stage_channels},   {"blocks_per_stage", c.blocks_per_stage},
           {"bottleneck_divisor", c.bottleneck_divisor}};
}

void from_json(const json& j, EncoderConfig& c) {
  j.at("input_channels").get_to(c.input_channels);
  j.at("image_size").get_to(c.image_size);
  j.at("receptive_field").get_to(c.receptive_field);
  j.at("stem_channels").get_to(c.stem_channels);
  j.at("stage_channels").get_to(c.stage_channels);
  j.at("blocks_per_stage").get_to(c.blocks_per_stage);
  j.at("bottleneck_divisor").get_to(c.bottleneck_divisor);
}

void to_json(json& j, const ProjectorConfig& c) {
  j = json{{"in_dim", c.in_dim}, {"hidden_dims", c.hidden_dims}, {"out_dim", c.out_dim}};
}

void from_json(const json& j, ProjectorConfig& c) {
  j.at("in_dim").get_to(c.in_dim);
  j.at("hidden_dims").get_to(c.hidden_dims);
  j.at("out_dim").get_to(c.out_dim);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"encoder", c.encoder}, {"projector", c.projector}, {"n_classes", c.n_classes},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("projector").get_to(c.projector);
  j.at("n_classes").get_to(c.n_classes);
  j.at("seed").get_to(c.seed);
}

void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"kind", to_string(c.kind)}, {"weight_decay", c.weight_decay},
           {"momentum", c.momentum},    {"trust_coefficient", c.trust_coefficient},
           {"beta1", c.beta1},          {"beta2", c.beta2},
           {"epsilon", c.epsilon}};
}

void from_json(const json& j, OptimizerConfig& c) {
  c.kind = parse_optimizer_kind(j.at("kind").get<std::string>());
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("momentum").get_to(c.momentum);
  j.at("trust_coefficient").get_to(c.trust_coefficient);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("epsilon").get_to(c.epsilon);
}

void to_json(json& j, const StagePlan& p) {
  j = json{{"stage_id", p.stage_id},          {"loss", to_string(p.loss)},
           {"trainable", to_string(p.trainable)}, {"epochs", p.epochs},
           {"base_lr", p.base_lr},            {"schedule", to_string(p.schedule)},
           {"warmup_epochs", p.warmup_epochs}};
}

void from_json(const json& j, StagePlan& p) {
  j.at("stage_id").get_to(p.stage_id);
  p.loss = parse_loss_kind(j.at("loss").get<std::string>());
  p.trainable = parse_trainable_set(j.at("trainable").get<std::string>());
  j.at("epochs").get_to(p.epochs);
  j.at("base_lr").get_to(p.base_lr);
  p.schedule = parse_lr_schedule(j.at("schedule").get<std::string>());
  j.at("warmup_epochs").get_to(p.warmup_epochs);
}

void to_json(json& j, const AugmentConfig& c) {
  j = json{{"output_size", c.output_size},
           {"random_crop", c.random_crop},
           {"crop_scale_min", c.crop_scale_min},
           {"crop_scale_max", c.crop_scale_max},
           {"crop_ratio_min", c.crop_ratio_min},
           {"crop_ratio_max", c.crop_ratio_max},
           {"flip_probability", c.flip_probability},
           {"jitter_probability", c.jitter_probability},
           {"brightness", c.brightness},
           {"contrast", c.contrast},
           {"saturation", c.saturation},
           {"hue", c.hue},
           {"grayscale_probability", c.grayscale_probability}};
}

void from_json(const json& j, AugmentConfig& c) {
  j.at("output_size").get_to(c.output_size);
  j.at("random_crop").get_to(c.random_crop);
  j.at("crop_scale_min").get_to(c.crop_scale_min);
  j.at("crop_scale_max").get_to(c.crop_scale_max);
  j.at("crop_ratio_min").get_to(c.crop_ratio_min);
  j.at("crop_ratio_max").get_to(c.crop_ratio_max);
  j.at("flip_probability").get_to(c.flip_probability);
  j.at("jitter_probability").get_to(c.jitter_probability);
  j.at("brightness").get_to(c.brightness);
  j.at("contrast").get_to(c.contrast);
  j.at("saturation").get_to(c.saturation);
  j.at("hue").get_to(c.hue);
  j.at("grayscale_probability").get_to(c.grayscale_probability);
}

Model::Model(const ModelConfig& config) : base_(config) {
  config.validate();
  // Independent streams so adding a head never perturbs the backbone init.
  encoder = Encoder<float>(config.encoder, config.seed);
  projector = Projector<float>(config.projector, config.seed + 1);
  if (config.n_classes >= 2)
    head.emplace(config.encoder.feature_dim(), config.n_classes, config.seed + 2);
}

ModelConfig Model::config() const {
  ModelConfig c = base_;
  c.projector = projector.config();
  c.n_classes = head ? head->n_classes() : 0;
  return c;
}

void Model::anneal_to_2d(std::uint64_t seed) { projector = projector.anneal_to_2d(seed); }

void Model::attach_head(int n_classes, std::uint64_t seed) {
  head.emplace(encoder.config().feature_dim(), n_classes, seed);
}

Tensor<float> Model::embed(const Tensor<float>& images) const {
  const FeatureMap<float> fm = encoder.encode(images);
  return projector.project(global_average_pool(fm));
}

ParameterList<float> Model::parameters() {
  ParameterList<float> out;
  encoder.collect(out);
  projector.collect(out);
  if (head) head->collect(out);
  return out;
}

ParameterList<float> Model::encoder_parameters() { return encoder.parameters(); }

BufferList<float> Model::buffers() {
  BufferList<float> out;
  encoder.collect_buffers(out);
  return out;
}

std::uint64_t checksum(const ParameterList<float>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(float));
  }
  return h;
}

}  // namespace bagclr
