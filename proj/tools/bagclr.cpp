#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "bagclr/run_config.hpp"
#include "plot.hpp"

namespace fs = std::filesystem;
using namespace bagclr;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

// Settings shared by every subcommand: a config file, free-form overrides and
// the subcommand's own flags, applied in that order.
struct Layers {
  std::string config_file;
  std::vector<std::string> assignments;
  std::vector<std::pair<std::string, std::string>> flags;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", config_file, "flat `key = value` config file")
        ->check(CLI::ExistingFile);
    app->add_option("--set", assignments, "override any config key: --set stage1.epochs=50");
  }

  template <typename T>
  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<T>(
        flag,
        [this, key](const T& v) {
          std::ostringstream s;
          s.precision(17);
          s << v;
          flags.emplace_back(key, s.str());
        },
        help + " (" + key + ")");
  }

  RunConfig resolve() const {
    RunConfig rc = RunConfig::defaults();
    if (!config_file.empty()) rc.load_file(config_file);
    for (const auto& a : assignments) rc.set_assignment(a);
    for (const auto& [k, v] : flags) rc.set(k, v);
    rc.validate();
    return rc;
  }
};

DatasetManifest load_data(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  if (!fs::exists(dir / "labels.csv")) throw DataError("no labels.csv in " + dir.string());
  DatasetManifest m = load_manifest(dir, dir / "labels.csv");
  decode_images(m);
  return m;
}

Checkpoint load_ckpt(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

json run_json(const RunConfig& rc, const std::string& command) {
  return json{{"command", command}, {"settings", rc.to_json()}};
}

// Test fold of the participant split; every other fold trains.
struct Partition {
  std::vector<std::size_t> train, test;
};

Partition partition(const DatasetManifest& m, const RunConfig& rc) {
  const SplitSpec split = stratified_participant_split(m, rc.split_folds(), rc.split_seed());
  const int fold = rc.get_int("eval.test_fold");
  return {split.records_outside_fold(m, fold), split.records_in_fold(m, fold)};
}

void emit(const fs::path& out_dir, const std::vector<MetricRow>& rows) {
  for (const auto& r : rows) std::printf("%s,%s,%.17g\n", r.dataset.c_str(), r.metric.c_str(), r.value);
  if (!out_dir.empty()) write_metrics_csv(out_dir / "metrics.csv", rows);
}

// ------------------------------------------------------------ commands

int cmd_generate(const RunConfig& rc, const fs::path& out) {
  const DatasetManifest m = generate_synthetic_dataset(rc.synthetic());
  write_dataset(m, out);
  rc.write_resolved(out);
  std::printf("wrote %zu images to %s\n", m.records.size(), out.string().c_str());
  return 0;
}

int cmd_pretrain(const RunConfig& rc, const fs::path& data, const fs::path& out,
                 const std::string& resume_path) {
  const PretrainConfig pc = rc.pretrain();
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_ckpt(resume_path);
  DatasetManifest m = load_data(data);
  if (m.records.size() < static_cast<std::size_t>(pc.batch_size))
    throw DataError("dataset has " + std::to_string(m.records.size()) +
                    " images, fewer than one batch of " + std::to_string(pc.batch_size));
  rc.write_resolved(out);

  Model model = resume ? restore_model(*resume) : Model(pc.model);
  StageOptions opts;
  opts.out_dir = out;
  opts.run_config = run_json(rc, "pretrain");
  opts.resume = resume ? &*resume : nullptr;
  int stage = -1, epoch = -1, count = 0;
  double sum = 0.0;
  auto flush = [&] {
    if (count) std::fprintf(stderr, "stage %d epoch %d loss %.6f\n", stage, epoch, sum / count);
    sum = 0.0;
    count = 0;
  };
  opts.on_step = [&](const LogRow& r) {
    if (r.stage != stage || r.epoch != epoch) flush();
    stage = r.stage, epoch = r.epoch;
    sum += r.loss;
    ++count;
  };
  const Checkpoint last = pretrain(model, m, pc, opts);
  flush();
  std::printf("pretraining finished at stage %d; projector out_dim %d\n", last.stage,
              last.model_config().projector.out_dim);
  return 0;
}

int cmd_finetune(const RunConfig& rc, const fs::path& data, const fs::path& ckpt_path,
                 const fs::path& out) {
  const FinetuneConfig fc = rc.finetune();
  const Checkpoint ck = load_ckpt(ckpt_path);
  const DatasetManifest m = load_data(data);
  rc.write_resolved(out);
  const SplitSpec split = stratified_participant_split(m, rc.split_folds(), rc.split_seed());
  FinetuneOptions opts;
  opts.out_dir = out;
  opts.run_config = run_json(rc, "finetune");
  opts.on_epoch = [](int fold, int epoch, double loss, double val) {
    std::fprintf(stderr, "fold %d epoch %d loss %.6f val_auroc %.4f\n", fold, epoch, loss, val);
  };
  std::vector<MetricRow> rows;
  const auto lambdas = rc.get_reals("finetune.lambdas");
  if (lambdas.empty()) {
    const auto folds = finetune(ck, m, fc, split, opts);
    double auroc = 0.0, prec = 0.0;
    for (const auto& f : folds) auroc += f.auroc / folds.size(), prec += f.precision_at_k / folds.size();
    rows.push_back({m.name, "finetune_auroc", auroc});
    rows.push_back({m.name, "precision_at_" + std::to_string(fc.precision_k), prec});
  } else {
    const SweepResult s =
        sparsity_sweep(ck, m, lambdas, fc, split, rc.get_real("finetune.tolerance"), opts);
    for (const auto& r : s.rows) {
      char tag[64];
      std::snprintf(tag, sizeof tag, "@lambda=%g", r.lambda);
      rows.push_back({m.name, std::string("finetune_auroc") + tag, r.mean_auroc});
      rows.push_back({m.name, "precision_at_" + std::to_string(fc.precision_k) + tag,
                      r.mean_precision_at_k});
    }
    rows.push_back({m.name, "recommended_lambda", s.recommended_lambda});
  }
  emit(out, rows);
  return 0;
}

int cmd_probe(const RunConfig& rc, const fs::path& data, const fs::path& ckpt_path, const fs::path& out) {
  const ProbeConfig pc = rc.probe();
  const Checkpoint ck = load_ckpt(ckpt_path);
  const DatasetManifest m = load_data(data);
  if (!out.empty()) rc.write_resolved(out);
  const Model model = restore_model(ck);
  const Partition p = partition(m, rc);
  const Tensor<double> features = encode_dataset(model, m);
  std::vector<std::string> groups;
  for (const auto& r : m.records) groups.push_back(r.participant_id);
  const ProbeResult r = linear_probe(features, m.labels(), groups, p.train, p.test, pc);
  std::fprintf(stderr, "selected strength %g (validation AUROC %.4f)\n", r.strength, r.validation_auroc);
  emit(out, {{m.name, "probe_auroc", r.test_auroc}});
  return 0;
}

int cmd_eval(const RunConfig& rc, const fs::path& data, const fs::path& ckpt_path, const fs::path& out) {
  const Checkpoint ck = load_ckpt(ckpt_path);
  const DatasetManifest m = load_data(data);
  if (!out.empty()) rc.write_resolved(out);
  const Model model = restore_model(ck);
  const Partition p = partition(m, rc);
  const EmbeddingDataset emb = embed_dataset(model, m);
  const int k = rc.get_int("eval.k");
  const double v = knn_auroc(emb, m.n_classes, static_cast<std::size_t>(k), p.train, p.test);
  emit(out, {{m.name, "knn_auroc_k" + std::to_string(k), v}});
  return 0;
}

int cmd_embed(const RunConfig& rc, const fs::path& data, const fs::path& ckpt_path, const fs::path& out) {
  const Checkpoint ck = load_ckpt(ckpt_path);
  const DatasetManifest m = load_data(data);
  const Model model = restore_model(ck);
  const EmbeddingDataset emb = embed_dataset(model, m);
  if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
    rc.write_resolved(out.parent_path());
  }
  std::ofstream f(out);
  if (!f) throw DataError("cannot write " + out.string());
  f << "id,x,y,label\n";
  char buf[96];
  for (std::size_t i = 0; i < emb.ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g,", emb.points.at(i, 0), emb.points.at(i, 1));
    f << emb.ids[i] << buf;
    if (emb.labels[i] >= 0) f << emb.labels[i];
    f << '\n';
  }
  std::printf("embedded %zu images into %s\n", emb.ids.size(), out.string().c_str());
  return 0;
}

int cmd_plot(const RunConfig& rc, const fs::path& embedding, const fs::path& ckpt_path,
             const fs::path& data, const std::string& image_id, int cls, int scale, const fs::path& out) {
  if (out.has_parent_path()) rc.write_resolved(out.parent_path());
  if (!embedding.empty()) {
    const plot::Scatter s = plot::render_scatter(plot::read_embedding_csv(embedding));
    plot::write_png_file(out, s.image);
    std::printf("scatter with %zu legend entries written to %s\n", s.legend.size(), out.string().c_str());
    return 0;
  }
  if (ckpt_path.empty() || data.empty() || image_id.empty())
    throw ConfigError("plot needs --embedding, or --checkpoint with --data and --image-id");
  const Checkpoint ck = load_ckpt(ckpt_path);
  DatasetManifest m = load_data(data);
  const ImageRecord& r = m.records[m.index_of(image_id)];
  const Model model = restore_model(ck);
  if (!model.head) throw ConfigError("evidence overlays need a fine-tuned checkpoint with a classifier head");
  const int n = model.head->n_classes();
  if (cls < 0) cls = r.label && *r.label > 0 ? *r.label : n - 1;
  if (cls >= n) throw ConfigError("--class must lie in [0, " + std::to_string(n) + ")");
  const int size = model.encoder.config().image_size;
  const Image img = r.pixels.height == size && r.pixels.width == size ? r.pixels : resize_bilinear(r.pixels, size, size);
  const EvidenceOutput ev = forward_with_evidence(model, to_batch(std::vector<Image>{img}));
  const auto map = ev.maps.map(0, static_cast<std::size_t>(cls));
  std::optional<Mask> mask = r.lesion_mask;
  if (mask && (mask->height != size || mask->width != size)) mask.reset();
  const plot::Overlay o = plot::render_evidence_overlay(img, std::vector<float>(map.begin(), map.end()),
                                                        static_cast<int>(ev.maps.rows()),
                                                        static_cast<int>(ev.maps.cols()), mask, scale);
  plot::write_png_file(out, o.image);
  std::printf("evidence overlay for %s (class %d, %d lesion outlines) written to %s\n", image_id.c_str(),
              cls, o.contours, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive BagNet pretraining, 2-D maps and evidence classifiers"};
  app.require_subcommand(1);

  std::string data, out, checkpoint, resume, embedding, image_id, metric = "knn-auroc";
  int cls = -1, scale = 8;

  Layers gen_l, pre_l, ft_l, probe_l, eval_l, embed_l, plot_l;

  auto* gen = app.add_subcommand("generate", "write a synthetic lesion corpus");
  gen_l.add_to(gen);
  gen->add_option("--out", out, "output directory")->required();
  gen_l.bind<int>(gen, "--n", "data.n_images", "number of images");
  gen_l.bind<int>(gen, "--classes", "data.classes", "number of grades");
  gen_l.bind<int>(gen, "--size", "data.image_size", "image side in pixels");
  gen_l.bind<std::uint64_t>(gen, "--seed", "data.seed", "generator seed");

  auto* pre = app.add_subcommand("pretrain", "three-stage contrastive pretraining");
  pre_l.add_to(pre);
  pre->add_option("--data", data, "dataset directory")->required();
  pre->add_option("--out", out, "run directory")->required();
  pre->add_option("--resume", resume, "continue from a checkpoint");
  pre_l.bind<int>(pre, "--batch", "train.batch_size", "batch size");
  pre_l.bind<std::string>(pre, "--optimizer", "optimizer.kind", "lars, sgd_momentum or adamw");
  pre_l.bind<std::uint64_t>(pre, "--seed", "train.seed", "training seed");
  pre_l.bind<int>(pre, "--stage1-epochs", "stage1.epochs", "stage-one epochs");
  pre_l.bind<int>(pre, "--stage2-epochs", "stage2.epochs", "stage-two epochs");
  pre_l.bind<int>(pre, "--stage3-epochs", "stage3.epochs", "stage-three epochs");

  auto* ft = app.add_subcommand("finetune", "cross-validated evidence-head fine-tuning");
  ft_l.add_to(ft);
  ft->add_option("--data", data, "dataset directory")->required();
  ft->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
  ft->add_option("--out", out, "output directory")->required();
  ft_l.bind<std::string>(ft, "--lambdas", "finetune.lambdas", "comma list: run a sparsity sweep");
  ft_l.bind<double>(ft, "--sparsity", "finetune.sparsity", "sparsity coefficient for a single run");
  ft_l.bind<int>(ft, "--folds", "split.folds", "cross-validation folds");
  ft_l.bind<int>(ft, "--max-epochs", "finetune.max_epochs", "epoch cap");

  auto* probe = app.add_subcommand("probe", "elastic-net linear probe on encoder features");
  probe_l.add_to(probe);
  probe->add_option("--data", data, "dataset directory")->required();
  probe->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  probe->add_option("--out", out, "directory for metrics.csv");
  probe_l.bind<int>(probe, "--fold", "eval.test_fold", "test fold of the participant split");

  auto* ev = app.add_subcommand("eval", "metrics of a 2-D map");
  eval_l.add_to(ev);
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "2-D checkpoint")->required();
  ev->add_option("--metric", metric, "metric")->check(CLI::IsMember({"knn-auroc"}));
  ev->add_option("--out", out, "directory for metrics.csv");
  eval_l.bind<int>(ev, "--k", "eval.k", "neighbors");
  eval_l.bind<int>(ev, "--fold", "eval.test_fold", "test fold of the participant split");

  auto* emb = app.add_subcommand("embed", "2-D coordinates of every image");
  embed_l.add_to(emb);
  emb->add_option("--data", data, "dataset directory")->required();
  emb->add_option("--checkpoint", checkpoint, "2-D checkpoint")->required();
  emb->add_option("--out", out, "CSV file id,x,y,label")->required();

  auto* pl = app.add_subcommand("plot", "scatter of an embedding CSV, or an evidence overlay");
  plot_l.add_to(pl);
  pl->add_option("--embedding", embedding, "embedding CSV from `embed`");
  pl->add_option("--checkpoint", checkpoint, "fine-tuned checkpoint");
  pl->add_option("--data", data, "dataset directory");
  pl->add_option("--image-id", image_id, "image to overlay");
  pl->add_option("--class", cls, "evidence class (default: the image's grade, else the top grade)");
  pl->add_option("--scale", scale, "pixel upscaling")->check(CLI::Range(1, 32));
  pl->add_option("--out", out, "PNG file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_l.resolve(), out);
    if (*pre) return cmd_pretrain(pre_l.resolve(), data, out, resume);
    if (*ft) return cmd_finetune(ft_l.resolve(), data, checkpoint, out);
    if (*probe) return cmd_probe(probe_l.resolve(), data, checkpoint, out);
    if (*ev) return cmd_eval(eval_l.resolve(), data, checkpoint, out);
    if (*emb) return cmd_embed(embed_l.resolve(), data, checkpoint, out);
    if (*pl) return cmd_plot(plot_l.resolve(), embedding, checkpoint, data, image_id, cls, scale, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return kExitTraining;
  }
  return kExitUsage;
}
