#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "bagclr/trainer.hpp"

using namespace bagclr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bagclr_ckpt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.encoder.image_size = 16;
  m.encoder.stem_channels = 4;
  m.encoder.stage_channels = {4, 6, 6, 8};
  m.projector.in_dim = 8;
  m.projector.hidden_dims = {8};
  m.projector.out_dim = 128;
  m.seed = 21;
  return m;
}

PretrainConfig tiny_config() {
  PretrainConfig c;
  c.model = tiny_model();
  c.augment.output_size = 16;
  c.optimizer.kind = OptimizerKind::kSgdMomentum;
  c.batch_size = 8;
  c.stages = {StagePlan::standard(1, 4, 0.05, 1), StagePlan::standard(2, 2, 0.05),
              StagePlan::standard(3, 2, 0.05, 1)};
  c.checkpoint_every = 1;
  c.seed = 4;
  return c;
}

const DatasetManifest& tiny_data() {
  static const DatasetManifest m = [] {
    SyntheticConfig s;
    s.n_images = 32;
    s.image_size = 16;
    s.seed = 12;
    return generate_synthetic_dataset(s);
  }();
  return m;
}

Tensor<float> probe_images() {
  SyntheticConfig s;
  s.n_images = 4;
  s.image_size = 16;
  s.seed = 99;
  const auto m = generate_synthetic_dataset(s);
  std::vector<Image> imgs;
  for (const auto& r : m.records) imgs.push_back(r.pixels);
  return to_batch(imgs);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = scratch("roundtrip");
  Model model(tiny_model());
  model.attach_head(3, 5);
  std::mt19937_64 rng(77);
  rng.discard(13);
  Optimizer opt(OptimizerConfig{});
  for (auto* p : model.parameters()) p->grad.fill(0.01f);
  opt.step(model.parameters(), 0.1);
  const Checkpoint ck = capture(model, 1, 3, json{{"note", "x"}}, rng, &opt);
  save_checkpoint(dir / "a.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", back);
  EXPECT_EQ(bytes_of(dir / "a.ckpt"), bytes_of(dir / "b.ckpt"));
  EXPECT_EQ(back.stage, 1);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.config["note"], "x");

  std::mt19937_64 r2 = rng_from_string(back.rng_state);
  EXPECT_EQ(r2(), rng());

  Model again = restore_model(back);
  EXPECT_EQ(checksum(again.parameters()), checksum(model.parameters()));
  const Tensor<float> x = probe_images();
  EXPECT_EQ(again.embed(x), model.embed(x));
  const Optimizer o2 = restore_optimizer(back);
  EXPECT_EQ(o2.slots().size(), opt.slots().size());
  for (const auto& [name, slot] : opt.slots()) EXPECT_EQ(o2.slots().at(name).first, slot.first);
  EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  Model model(tiny_model());
  std::mt19937_64 rng(1);
  auto bytes = serialize(capture(model, 1, 0, json::object(), rng));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), DataError);
  bytes.resize(bytes.size() - 4);
  EXPECT_THROW(deserialize(bytes), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), DataError);
}

TEST(Checkpoint, LoadWeightsShapeMismatch) {
  Model a(tiny_model());
  ModelConfig other = tiny_model();
  other.projector.hidden_dims = {16};
  Model b(other);
  std::mt19937_64 rng(1);
  EXPECT_THROW(load_weights(b, capture(a, 1, 0, json::object(), rng)), ShapeError);
}

TEST(Checkpoint, AnnealedArchitectureRoundTrips) {
  Model model(tiny_model());
  model.anneal_to_2d(3);
  std::mt19937_64 rng(1);
  const Checkpoint ck = deserialize(serialize(capture(model, 2, 0, json::object(), rng)));
  EXPECT_EQ(ck.model_config().projector.out_dim, 2);
  Model back = restore_model(ck);
  EXPECT_EQ(back.projector.out_dim(), 2);
  EXPECT_EQ(checksum(back.parameters()), checksum(model.parameters()));
}

TEST(Trainer, StageOneLossDecreases) {
  const PretrainConfig cfg = tiny_config();
  Model model(cfg.model);
  const StagePlan plan = StagePlan::standard(1, 3, 0.05, 1);
  const StageResult r = run_stage(plan, model, tiny_data(), cfg);
  ASSERT_EQ(r.epoch_mean_loss.size(), 3u);
  EXPECT_LT(r.epoch_mean_loss[2], r.epoch_mean_loss[0]);
  EXPECT_EQ(r.log.size(), 3u * 4u);
  EXPECT_EQ(r.checkpoint.epoch, 3);
}

TEST(Trainer, LarsRunsAndLogs) {
  PretrainConfig cfg = tiny_config();
  cfg.optimizer = OptimizerConfig{};
  Model model(cfg.model);
  const fs::path dir = scratch("lars");
  StageOptions opts;
  opts.out_dir = dir;
  const StageResult r = run_stage(StagePlan::standard(1, 2, 0.5, 1), model, tiny_data(), cfg, opts);
  for (const auto& row : r.log) EXPECT_TRUE(std::isfinite(row.loss));
  std::ifstream log(dir / "train_log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "stage,epoch,step,lr,loss");
  EXPECT_TRUE(fs::exists(dir / "stage1.ckpt"));
}

TEST(Trainer, SameSeedSameLog) {
  const PretrainConfig cfg = tiny_config();
  Model a(cfg.model), b(cfg.model);
  const StagePlan plan = StagePlan::standard(1, 2, 0.05, 1);
  const auto ra = run_stage(plan, a, tiny_data(), cfg), rb = run_stage(plan, b, tiny_data(), cfg);
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) EXPECT_EQ(ra.log[i].loss, rb.log[i].loss);
  EXPECT_EQ(checksum(a.parameters()), checksum(b.parameters()));
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const PretrainConfig cfg = tiny_config();
  const StagePlan plan = cfg.stages[0];
  Model full(cfg.model);
  const StageResult whole = run_stage(plan, full, tiny_data(), cfg);

  const fs::path dir = scratch("resume");
  Model part(cfg.model);
  StageOptions first;
  first.out_dir = dir;
  first.stop_after_epoch = 2;
  const StageResult head = run_stage(plan, part, tiny_data(), cfg, first);
  ASSERT_TRUE(fs::exists(dir / "stage1_epoch0002.ckpt"));

  const Checkpoint ck = load_checkpoint(dir / "stage1_epoch0002.ckpt");
  EXPECT_EQ(ck.epoch, 2);
  Model resumed = restore_model(ck);
  StageOptions second;
  second.resume = &ck;
  const StageResult tail = run_stage(plan, resumed, tiny_data(), cfg, second);

  std::vector<LogRow> joined = head.log;
  joined.insert(joined.end(), tail.log.begin(), tail.log.end());
  ASSERT_EQ(joined.size(), whole.log.size());
  for (std::size_t i = 0; i < joined.size(); ++i) {
    EXPECT_EQ(joined[i].epoch, whole.log[i].epoch);
    EXPECT_EQ(joined[i].step, whole.log[i].step);
    EXPECT_EQ(joined[i].lr, whole.log[i].lr);
    EXPECT_EQ(joined[i].loss, whole.log[i].loss) << i;
  }
  EXPECT_EQ(checksum(resumed.parameters()), checksum(full.parameters()));
}

TEST(Trainer, PeriodicCheckpointsArePruned) {
  PretrainConfig cfg = tiny_config();
  cfg.stages[0] = StagePlan::standard(1, 5, 0.05, 1);
  Model model(cfg.model);
  const fs::path dir = scratch("prune");
  StageOptions opts;
  opts.out_dir = dir;
  run_stage(cfg.stages[0], model, tiny_data(), cfg, opts);
  EXPECT_FALSE(fs::exists(dir / "stage1_epoch0001.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "stage1_epoch0002.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "stage1_epoch0003.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "stage1_epoch0004.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "stage1.ckpt"));
}

TEST(Trainer, StageTwoFreezesEncoderAndPrefix) {
  const PretrainConfig cfg = tiny_config();
  Model model(cfg.model);
  model.anneal_to_2d(cfg.anneal_seed);
  const auto enc = checksum(model.encoder_parameters());
  const auto prefix = checksum(model.projector.prefix_parameters());
  const auto last = checksum(model.projector.last_layer_parameters());
  std::vector<float> running_mean;
  for (auto* b : model.buffers()) running_mean.insert(running_mean.end(), b->value.values().begin(), b->value.values().end());
  run_stage(cfg.stages[1], model, tiny_data(), cfg);
  EXPECT_EQ(checksum(model.encoder_parameters()), enc);
  EXPECT_EQ(checksum(model.projector.prefix_parameters()), prefix);
  EXPECT_NE(checksum(model.projector.last_layer_parameters()), last);
  std::vector<float> after;
  for (auto* b : model.buffers()) after.insert(after.end(), b->value.values().begin(), b->value.values().end());
  EXPECT_EQ(after, running_mean);
}

TEST(Trainer, RealignKeepsEncoderFrozen) {
  const PretrainConfig cfg = tiny_config();
  Model model(cfg.model);
  model.anneal_to_2d(1);
  const auto enc = checksum(model.encoder_parameters());
  const StageResult r = realign_projector(model, tiny_data(), cfg, 1);
  EXPECT_EQ(r.epoch_mean_loss.size(), 1u);
  EXPECT_EQ(checksum(model.encoder_parameters()), enc);
}

TEST(Trainer, StagePreconditions) {
  const PretrainConfig cfg = tiny_config();
  Model model(cfg.model);
  try {
    run_stage(cfg.stages[1], model, tiny_data(), cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("anneal"), std::string::npos);
  }
  model.anneal_to_2d(1);
  EXPECT_THROW(run_stage(cfg.stages[0], model, tiny_data(), cfg), ConfigError);

  Model fresh(cfg.model);
  DatasetManifest few = tiny_data();
  few.records.resize(5);
  EXPECT_THROW(run_stage(cfg.stages[0], fresh, few, cfg), DataError);

  std::mt19937_64 rng(0);
  const Checkpoint other = capture(fresh, 3, 1, json::object(), rng);
  StageOptions opts;
  opts.resume = &other;
  EXPECT_THROW(run_stage(cfg.stages[0], fresh, tiny_data(), cfg, opts), ConfigError);
}

TEST(Trainer, PretrainEndsTwoDimensional) {
  PretrainConfig cfg = tiny_config();
  cfg.stages = {StagePlan::standard(1, 2, 0.05, 1), StagePlan::standard(2, 1, 0.05),
                StagePlan::standard(3, 2, 0.05, 1)};
  Model model(cfg.model);
  const fs::path dir = scratch("pretrain");
  StageOptions opts;
  opts.out_dir = dir;
  const Checkpoint ck = pretrain(model, tiny_data(), cfg, opts);
  EXPECT_EQ(ck.stage, 3);
  EXPECT_EQ(model.projector.out_dim(), 2);
  EXPECT_EQ(ck.model_config().projector.out_dim, 2);
  for (int s = 1; s <= 3; ++s) EXPECT_TRUE(fs::exists(dir / ("stage" + std::to_string(s) + ".ckpt")));
  const Checkpoint s1 = load_checkpoint(dir / "stage1.ckpt");
  EXPECT_EQ(s1.model_config().projector.out_dim, 128);
}

TEST(PretrainConfigTest, PaperScaleDefaults) {
  const PretrainConfig c;
  EXPECT_EQ(c.batch_size, 1024);
  EXPECT_EQ(c.stages[0].epochs, 1000);
  EXPECT_EQ(c.stages[1].epochs, 25);
  EXPECT_EQ(c.stages[2].epochs, 200);
  EXPECT_NEAR(c.stages[0].base_lr, 2.4, 1e-12);
  EXPECT_NEAR(c.optimizer.weight_decay, 1e-6, 1e-18);
  EXPECT_EQ(c.stages[0].warmup_epochs, 10);
  c.validate();
}

TEST(PretrainConfigTest, JsonRoundTrip) {
  const PretrainConfig c = tiny_config();
  const json j = c;
  const PretrainConfig back = j.get<PretrainConfig>();
  EXPECT_EQ(json(back), j);
  PretrainConfig bad = c;
  bad.augment.output_size = 32;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
