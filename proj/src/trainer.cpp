#include "bagclr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace bagclr {

void PretrainConfig::validate() const {
  model.validate();
  augment.validate();
  if (augment.output_size != model.encoder.image_size)
    throw ConfigError("augment output_size must equal encoder image_size");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].stage_id != static_cast<int>(i) + 1)
      throw ConfigError("stage plans must be ordered 1, 2, 3");
    stages[i].validate();
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (keep_checkpoints < 1) throw ConfigError("keep_checkpoints must be >= 1");
}

void to_json(json& j, const PretrainConfig& c) {
  j = json{{"model", c.model},
           {"augment", c.augment},
           {"optimizer", c.optimizer},
           {"batch_size", c.batch_size},
           {"temperature", c.temperature},
           {"stages", c.stages},
           {"checkpoint_every", c.checkpoint_every},
           {"keep_checkpoints", c.keep_checkpoints},
           {"seed", c.seed},
           {"anneal_seed", c.anneal_seed}};
}

void from_json(const json& j, PretrainConfig& c) {
  j.at("model").get_to(c.model);
  j.at("augment").get_to(c.augment);
  j.at("optimizer").get_to(c.optimizer);
  j.at("batch_size").get_to(c.batch_size);
  j.at("temperature").get_to(c.temperature);
  j.at("stages").get_to(c.stages);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("keep_checkpoints").get_to(c.keep_checkpoints);
  j.at("seed").get_to(c.seed);
  j.at("anneal_seed").get_to(c.anneal_seed);
}

namespace {

std::filesystem::path periodic_path(const std::filesystem::path& dir, int stage, int epoch) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "stage%d_epoch%04d.ckpt", stage, epoch);
  return dir / buf;
}

void prune_periodic(const std::filesystem::path& dir, int stage, int newest, int every, int keep) {
  for (int e = newest - every * keep; e > 0; e -= every) {
    std::error_code ec;
    std::filesystem::remove(periodic_path(dir, stage, e), ec);
  }
}

class LogWriter {
 public:
  explicit LogWriter(const std::filesystem::path& dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    const auto path = dir / "train_log.csv";
    const bool fresh = !std::filesystem::exists(path);
    out_.open(path, std::ios::app);
    if (!out_) throw DataError("cannot open " + path.string());
    if (fresh) out_ << "stage,epoch,step,lr,loss\n";
  }
  void write(const LogRow& r) {
    if (!out_.is_open()) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g\n", r.stage, r.epoch, r.step, r.lr, r.loss);
    out_ << buf;
  }
  void flush() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
};

std::uint64_t stage_seed(std::uint64_t seed, int stage) {
  return seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(stage) * 0xD1B54A32D192ED03ull;
}

// Interleaved view batch: rows 2k and 2k+1 are the two views of image k.
Tensor<float> view_batch(const DatasetManifest& data, std::span<const std::size_t> idx,
                         std::span<const std::uint64_t> seeds, const AugmentConfig& aug) {
  std::vector<Image> views(2 * idx.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(idx.size()); ++k) {
    std::mt19937_64 rng(seeds[k]);
    ViewPair pair = augment_pair(data.records[idx[k]], aug, rng);
    views[2 * k] = std::move(pair.view_a);
    views[2 * k + 1] = std::move(pair.view_b);
  }
  return to_batch(views);
}

}  // namespace

StageResult run_stage(const StagePlan& plan, Model& model, const DatasetManifest& data,
                      const PretrainConfig& config, const StageOptions& options) {
  plan.validate();
  const int out_dim = model.projector.out_dim();
  if (plan.stage_id == 1 && out_dim != 128)
    throw ConfigError("stage 1 needs a 128-D projector, got " + std::to_string(out_dim) + "-D");
  if (plan.stage_id > 1 && out_dim != 2)
    throw ConfigError("stage " + std::to_string(plan.stage_id) +
                      " needs a 2-D projector; anneal the 128-D checkpoint first");
  const std::size_t n = data.records.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  if (n < batch)
    throw DataError("dataset has " + std::to_string(n) + " images, fewer than one batch of " +
                    std::to_string(batch));
  for (const auto& r : data.records)
    if (!r.decoded()) throw DataError("record " + r.id + " is not decoded");
  const int steps_per_epoch = static_cast<int>(n / batch);

  std::mt19937_64 rng(stage_seed(config.seed, plan.stage_id));
  Optimizer optimizer(config.optimizer);
  int start_epoch = 0;
  if (options.resume) {
    const Checkpoint& ck = *options.resume;
    if (ck.stage != plan.stage_id)
      throw ConfigError("cannot resume stage " + std::to_string(plan.stage_id) +
                        " from a stage-" + std::to_string(ck.stage) + " checkpoint");
    rng = rng_from_string(ck.rng_state);
    if (!ck.optimizer.is_null()) optimizer = restore_optimizer(ck);
    start_epoch = ck.epoch;
  }

  const bool full = plan.trainable == TrainableSet::kAll;
  ParameterList<float> all_params = model.parameters();
  ParameterList<float> trainable = full ? all_params : model.projector.last_layer_parameters();

  LogWriter log(options.out_dir);
  StageResult result;
  auto snapshot = [&](int epoch) {
    return capture(model, plan.stage_id, epoch, options.run_config, rng, &optimizer);
  };

  int end_epoch = plan.epochs;
  if (options.stop_after_epoch >= 0) end_epoch = std::min(end_epoch, options.stop_after_epoch);
  std::vector<std::size_t> order(n);
  std::vector<std::uint64_t> seeds(batch);
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::span<const std::size_t> idx(order.data() + step * batch, batch);
      for (auto& s : seeds) s = rng();
      const Tensor<float> views = view_batch(data, idx, seeds, config.augment);
      const double lr = lr_at(plan, epoch, steps_per_epoch, step);

      zero_grad(all_params);
      LossAndGrad<float> lg;
      if (full) {
        const FeatureMap<float> fm = model.encoder.forward(views, Mode::kTrain, true);
        const Tensor<float> z = model.projector.forward(global_average_pool(fm), true);
        lg = contrastive_loss(plan.loss, z, config.temperature);
        if (!std::isfinite(lg.loss)) throw TrainingError("non-finite loss at stage " +
                                                         std::to_string(plan.stage_id));
        const Tensor<float> gp = model.projector.backward(lg.grad, true);
        model.encoder.backward(global_average_pool_backward(gp, fm.rows(), fm.cols()), false);
      } else {
        const FeatureMap<float> fm = model.encoder.encode(views);
        const Tensor<float> z = model.projector.forward(global_average_pool(fm), true);
        lg = contrastive_loss(plan.loss, z, config.temperature);
        if (!std::isfinite(lg.loss)) throw TrainingError("non-finite loss at stage " +
                                                         std::to_string(plan.stage_id));
        model.projector.backward(lg.grad, false);
      }
      optimizer.step(trainable, lr);

      const LogRow row{plan.stage_id, epoch, step, lr, lg.loss};
      log.write(row);
      if (options.on_step) options.on_step(row);
      result.log.push_back(row);
      sum += lg.loss;
    }
    log.flush();
    result.epoch_mean_loss.push_back(sum / steps_per_epoch);

    const int done = epoch + 1;
    if (!options.out_dir.empty() && config.checkpoint_every > 0 &&
        done % config.checkpoint_every == 0 && done < plan.epochs) {
      save_checkpoint(periodic_path(options.out_dir, plan.stage_id, done), snapshot(done));
      prune_periodic(options.out_dir, plan.stage_id, done, config.checkpoint_every,
                     config.keep_checkpoints);
    }
  }

  result.checkpoint = snapshot(end_epoch);
  if (!options.out_dir.empty()) {
    const auto path = end_epoch == plan.epochs
                          ? options.out_dir / ("stage" + std::to_string(plan.stage_id) + ".ckpt")
                          : periodic_path(options.out_dir, plan.stage_id, end_epoch);
    save_checkpoint(path, result.checkpoint);
  }
  return result;
}

Checkpoint pretrain(Model& model, const DatasetManifest& data, const PretrainConfig& config,
                    const StageOptions& options) {
  config.validate();
  int first = 1;
  const Checkpoint* resume = options.resume;
  if (resume) {
    if (resume->stage < 1 || resume->stage > 3)
      throw ConfigError("checkpoint stage " + std::to_string(resume->stage) + " cannot be resumed");
    first = resume->stage;
    if (resume->epoch >= config.stages[first - 1].epochs) {
      ++first;
      resume = nullptr;
    }
  }
  StageOptions opts = options;
  opts.run_config = options.run_config;
  if (opts.run_config.is_null() || opts.run_config.empty()) opts.run_config = {{"pretrain", config}};
  Checkpoint last;
  if (first > 3) return *options.resume;
  for (int s = first; s <= 3; ++s) {
    if (s == 2 && model.projector.out_dim() != 2) model.anneal_to_2d(config.anneal_seed);
    opts.resume = s == first ? resume : nullptr;
    last = run_stage(config.stages[s - 1], model, data, config, opts).checkpoint;
  }
  return last;
}

StageResult realign_projector(Model& model, const DatasetManifest& data,
                              const PretrainConfig& config, int epochs,
                              const StageOptions& options) {
  StagePlan plan = config.stages[1];
  plan.epochs = epochs;
  return run_stage(plan, model, data, config, options);
}

}  // namespace bagclr
