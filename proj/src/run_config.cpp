#include "bagclr/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bagclr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(trim(part));
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_real(const std::string& s, double& out) {
  if (!parse_number(s, out)) return false;
  return std::isfinite(out);
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest text that reads back to the same double.
  for (int p = 1; p <= 17; ++p) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", p, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

std::string ints_text(const std::vector<int>& v) {
  std::vector<std::string> parts;
  for (int x : v) parts.push_back(std::to_string(x));
  return join(parts);
}

std::string reals_text(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double x : v) parts.push_back(format_real(x));
  return join(parts);
}

const char* kind_name(RunConfig::Kind k) {
  switch (k) {
    case RunConfig::Kind::kInt: return "an integer";
    case RunConfig::Kind::kUnsigned: return "a nonnegative integer";
    case RunConfig::Kind::kReal: return "a real number";
    case RunConfig::Kind::kBool: return "true or false";
    case RunConfig::Kind::kString: return "a string";
    case RunConfig::Kind::kIntList: return "a comma-separated integer list";
    case RunConfig::Kind::kRealList: return "a comma-separated real list";
  }
  return "?";
}

// Canonical text for `value` of `kind`, or nullopt when it does not parse.
std::optional<std::string> canonical(RunConfig::Kind kind, const std::string& raw) {
  const std::string v = trim(raw);
  switch (kind) {
    case RunConfig::Kind::kInt: {
      int x;
      return parse_number(v, x) ? std::optional(std::to_string(x)) : std::nullopt;
    }
    case RunConfig::Kind::kUnsigned: {
      std::uint64_t x;
      return parse_number(v, x) ? std::optional(std::to_string(x)) : std::nullopt;
    }
    case RunConfig::Kind::kReal: {
      double x;
      return parse_real(v, x) ? std::optional(format_real(x)) : std::nullopt;
    }
    case RunConfig::Kind::kBool:
      if (v == "true" || v == "1") return "true";
      if (v == "false" || v == "0") return "false";
      return std::nullopt;
    case RunConfig::Kind::kString:
      return v;
    case RunConfig::Kind::kIntList: {
      std::vector<int> xs;
      for (const auto& p : split_list(v)) {
        int x;
        if (!parse_number(p, x)) return std::nullopt;
        xs.push_back(x);
      }
      return ints_text(xs);
    }
    case RunConfig::Kind::kRealList: {
      std::vector<double> xs;
      for (const auto& p : split_list(v)) {
        double x;
        if (!parse_real(p, x)) return std::nullopt;
        xs.push_back(x);
      }
      return reals_text(xs);
    }
  }
  return std::nullopt;
}

}  // namespace

void RunConfig::define(const std::string& key, Kind kind, const std::string& value) {
  entries_[key] = Entry{kind, *canonical(kind, value)};
}

RunConfig RunConfig::defaults() {
  using K = Kind;
  RunConfig c;
  const SyntheticConfig syn;
  c.define("data.n_images", K::kInt, std::to_string(syn.n_images));
  c.define("data.classes", K::kInt, std::to_string(syn.n_classes));
  c.define("data.image_size", K::kInt, std::to_string(syn.image_size));
  c.define("data.seed", K::kUnsigned, std::to_string(syn.seed));
  c.define("data.images_per_participant", K::kInt, std::to_string(syn.images_per_participant));
  c.define("data.lesions_per_grade", K::kIntList, "");
  c.define("data.lesion_radius_min", K::kReal, format_real(syn.lesion_radius_min));
  c.define("data.lesion_radius_max", K::kReal, format_real(syn.lesion_radius_max));

  const EncoderConfig enc;
  const ProjectorConfig proj;
  c.define("model.image_size", K::kInt, std::to_string(enc.image_size));
  c.define("model.receptive_field", K::kInt, std::to_string(enc.receptive_field));
  c.define("model.stem_channels", K::kInt, std::to_string(enc.stem_channels));
  c.define("model.stage_channels", K::kIntList, ints_text(enc.stage_channels));
  c.define("model.blocks_per_stage", K::kInt, std::to_string(enc.blocks_per_stage));
  c.define("model.bottleneck_divisor", K::kInt, std::to_string(enc.bottleneck_divisor));
  c.define("model.hidden_dims", K::kIntList, ints_text(proj.hidden_dims));
  c.define("model.projection_dim", K::kInt, std::to_string(proj.out_dim));
  c.define("model.seed", K::kUnsigned, "0");

  const AugmentConfig aug;
  c.define("augment.random_crop", K::kBool, aug.random_crop ? "true" : "false");
  c.define("augment.crop_scale_min", K::kReal, format_real(aug.crop_scale_min));
  c.define("augment.crop_scale_max", K::kReal, format_real(aug.crop_scale_max));
  c.define("augment.crop_ratio_min", K::kReal, format_real(aug.crop_ratio_min));
  c.define("augment.crop_ratio_max", K::kReal, format_real(aug.crop_ratio_max));
  c.define("augment.flip_probability", K::kReal, format_real(aug.flip_probability));
  c.define("augment.jitter_probability", K::kReal, format_real(aug.jitter_probability));
  c.define("augment.brightness", K::kReal, format_real(aug.brightness));
  c.define("augment.contrast", K::kReal, format_real(aug.contrast));
  c.define("augment.saturation", K::kReal, format_real(aug.saturation));
  c.define("augment.hue", K::kReal, format_real(aug.hue));
  c.define("augment.grayscale_probability", K::kReal, format_real(aug.grayscale_probability));

  const OptimizerConfig opt;
  c.define("optimizer.kind", K::kString, to_string(opt.kind));
  c.define("optimizer.weight_decay", K::kReal, format_real(opt.weight_decay));
  c.define("optimizer.momentum", K::kReal, format_real(opt.momentum));
  c.define("optimizer.trust_coefficient", K::kReal, format_real(opt.trust_coefficient));

  const PretrainConfig pre;
  c.define("train.batch_size", K::kInt, std::to_string(pre.batch_size));
  c.define("train.temperature", K::kReal, format_real(pre.temperature));
  c.define("train.seed", K::kUnsigned, std::to_string(pre.seed));
  c.define("train.anneal_seed", K::kUnsigned, std::to_string(pre.anneal_seed));
  c.define("train.checkpoint_every", K::kInt, std::to_string(pre.checkpoint_every));
  c.define("train.keep_checkpoints", K::kInt, std::to_string(pre.keep_checkpoints));
  // base_lr 0 means 0.075 * sqrt(batch); stage 3 then divides by 1000.
  for (int s = 1; s <= 3; ++s) {
    const std::string p = "stage" + std::to_string(s) + ".";
    c.define(p + "epochs", K::kInt, std::to_string(pre.stages[s - 1].epochs));
    c.define(p + "base_lr", K::kReal, "0");
    if (s != 2) c.define(p + "warmup_epochs", K::kInt, std::to_string(pre.stages[s - 1].warmup_epochs));
  }

  const FinetuneConfig ft;
  c.define("finetune.head_lr", K::kReal, format_real(ft.head_lr));
  c.define("finetune.encoder_lr", K::kReal, format_real(ft.encoder_lr));
  c.define("finetune.weight_decay", K::kReal, format_real(ft.weight_decay));
  c.define("finetune.head_only_epochs", K::kInt, std::to_string(ft.head_only_epochs));
  c.define("finetune.max_epochs", K::kInt, std::to_string(ft.max_epochs));
  c.define("finetune.early_stop_patience", K::kInt, std::to_string(ft.early_stop_patience));
  c.define("finetune.sparsity", K::kReal, format_real(ft.sparsity));
  c.define("finetune.lambdas", K::kRealList, "");
  c.define("finetune.tolerance", K::kReal, "0.01");
  c.define("finetune.validation_folds", K::kInt, std::to_string(ft.validation_folds));
  c.define("finetune.batch_size", K::kInt, std::to_string(ft.batch_size));
  c.define("finetune.precision_k", K::kInt, std::to_string(ft.precision_k));
  c.define("finetune.seed", K::kUnsigned, std::to_string(ft.seed));
  c.define("finetune.run_folds", K::kIntList, "");

  c.define("split.folds", K::kInt, "5");
  c.define("split.seed", K::kUnsigned, "0");

  const ProbeConfig probe;
  c.define("probe.alpha", K::kReal, format_real(probe.alpha));
  c.define("probe.strengths", K::kRealList, reals_text(probe.strengths));
  c.define("probe.validation_folds", K::kInt, std::to_string(probe.validation_folds));
  c.define("probe.max_iterations", K::kInt, std::to_string(probe.max_iterations));
  c.define("probe.tolerance", K::kReal, format_real(probe.tolerance));
  c.define("probe.seed", K::kUnsigned, std::to_string(probe.seed));

  c.define("eval.k", K::kInt, "15");
  c.define("eval.test_fold", K::kInt, "0");
  return c;
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = entries_.find(trim(key));
  if (it == entries_.end()) throw ConfigError("unknown config key '" + trim(key) + "'");
  const auto c = canonical(it->second.kind, value);
  if (!c)
    throw ConfigError("config key '" + it->first + "' expects " + kind_name(it->second.kind) +
                      ", got '" + trim(value) + "'");
  it->second.value = *c;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    if (line.find('=') == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::raw(const std::string& key) const { return entry(key).value; }

int RunConfig::get_int(const std::string& key) const { return std::stoi(entry(key).value); }

std::uint64_t RunConfig::get_unsigned(const std::string& key) const {
  return std::stoull(entry(key).value);
}

double RunConfig::get_real(const std::string& key) const { return std::stod(entry(key).value); }

bool RunConfig::get_bool(const std::string& key) const { return entry(key).value == "true"; }

std::vector<int> RunConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& p : split_list(entry(key).value)) out.push_back(std::stoi(p));
  return out;
}

std::vector<double> RunConfig::get_reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& p : split_list(entry(key).value)) out.push_back(std::stod(p));
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, e] : entries_) s += k + " = " + e.value + "\n";
  return s;
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, e] : entries_) j[k] = e.value;
  return j;
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.resolved");
  out << to_text();
  if (!out) throw DataError("cannot write " + (dir / "config.resolved").string());
}

SyntheticConfig RunConfig::synthetic() const {
  SyntheticConfig s;
  s.n_images = get_int("data.n_images");
  s.n_classes = get_int("data.classes");
  s.image_size = get_int("data.image_size");
  s.seed = get_unsigned("data.seed");
  s.images_per_participant = get_int("data.images_per_participant");
  s.lesions_per_grade = get_ints("data.lesions_per_grade");
  s.lesion_radius_min = get_real("data.lesion_radius_min");
  s.lesion_radius_max = get_real("data.lesion_radius_max");
  return s;
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig c;
  EncoderConfig& e = c.model.encoder;
  e.image_size = get_int("model.image_size");
  e.receptive_field = get_int("model.receptive_field");
  e.stem_channels = get_int("model.stem_channels");
  e.stage_channels = get_ints("model.stage_channels");
  e.blocks_per_stage = get_int("model.blocks_per_stage");
  e.bottleneck_divisor = get_int("model.bottleneck_divisor");
  c.model.projector.in_dim = e.feature_dim();
  c.model.projector.hidden_dims = get_ints("model.hidden_dims");
  c.model.projector.out_dim = get_int("model.projection_dim");
  c.model.seed = get_unsigned("model.seed");

  AugmentConfig& a = c.augment;
  a.output_size = e.image_size;
  a.random_crop = get_bool("augment.random_crop");
  a.crop_scale_min = get_real("augment.crop_scale_min");
  a.crop_scale_max = get_real("augment.crop_scale_max");
  a.crop_ratio_min = get_real("augment.crop_ratio_min");
  a.crop_ratio_max = get_real("augment.crop_ratio_max");
  a.flip_probability = get_real("augment.flip_probability");
  a.jitter_probability = get_real("augment.jitter_probability");
  a.brightness = get_real("augment.brightness");
  a.contrast = get_real("augment.contrast");
  a.saturation = get_real("augment.saturation");
  a.hue = get_real("augment.hue");
  a.grayscale_probability = get_real("augment.grayscale_probability");

  c.optimizer.kind = parse_optimizer_kind(raw("optimizer.kind"));
  c.optimizer.weight_decay = get_real("optimizer.weight_decay");
  c.optimizer.momentum = get_real("optimizer.momentum");
  c.optimizer.trust_coefficient = get_real("optimizer.trust_coefficient");

  c.batch_size = get_int("train.batch_size");
  c.temperature = get_real("train.temperature");
  c.seed = get_unsigned("train.seed");
  c.anneal_seed = get_unsigned("train.anneal_seed");
  c.checkpoint_every = get_int("train.checkpoint_every");
  c.keep_checkpoints = get_int("train.keep_checkpoints");
  if (c.batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  const double auto_lr = default_base_lr(c.batch_size);
  for (int s = 1; s <= 3; ++s) {
    const std::string p = "stage" + std::to_string(s) + ".";
    const double lr = get_real(p + "base_lr");
    if (lr < 0.0) throw ConfigError(p + "base_lr must be >= 0 (0 selects the batch-size rule)");
    const int warmup = s == 2 ? 0 : get_int(p + "warmup_epochs");
    c.stages[s - 1] = StagePlan::standard(s, get_int(p + "epochs"), lr > 0.0 ? lr : auto_lr, warmup);
  }
  return c;
}

FinetuneConfig RunConfig::finetune() const {
  FinetuneConfig c;
  c.head_lr = get_real("finetune.head_lr");
  c.encoder_lr = get_real("finetune.encoder_lr");
  c.weight_decay = get_real("finetune.weight_decay");
  c.head_only_epochs = get_int("finetune.head_only_epochs");
  c.max_epochs = get_int("finetune.max_epochs");
  c.early_stop_patience = get_int("finetune.early_stop_patience");
  c.sparsity = get_real("finetune.sparsity");
  c.folds = split_folds();
  c.validation_folds = get_int("finetune.validation_folds");
  c.batch_size = get_int("finetune.batch_size");
  c.precision_k = get_int("finetune.precision_k");
  c.seed = get_unsigned("finetune.seed");
  c.run_folds = get_ints("finetune.run_folds");
  return c;
}

ProbeConfig RunConfig::probe() const {
  ProbeConfig c;
  c.alpha = get_real("probe.alpha");
  c.strengths = get_reals("probe.strengths");
  c.validation_folds = get_int("probe.validation_folds");
  c.max_iterations = get_int("probe.max_iterations");
  c.tolerance = get_real("probe.tolerance");
  c.seed = get_unsigned("probe.seed");
  return c;
}

void RunConfig::validate() const {
  const SyntheticConfig s = synthetic();
  if (s.n_images < 1) throw ConfigError("data.n_images must be >= 1");
  if (s.n_classes < 2) throw ConfigError("data.classes must be >= 2");
  pretrain().validate();
  finetune().validate();
  probe().validate();
  if (split_folds() < 2) throw ConfigError("split.folds must be >= 2");
  if (get_int("eval.k") < 1) throw ConfigError("eval.k must be >= 1");
  const int tf = get_int("eval.test_fold");
  if (tf < 0 || tf >= split_folds()) throw ConfigError("eval.test_fold must lie in [0, split.folds)");
  const auto lambdas = get_reals("finetune.lambdas");
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    if (lambdas[i] < 0.0 || (i && lambdas[i] <= lambdas[i - 1]))
      throw ConfigError("finetune.lambdas must be nonnegative and ascending");
}

}  // namespace bagclr
