#include "bagclr/finetune.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace bagclr {

void FinetuneConfig::validate() const {
  if (!(head_lr > 0.0) || !(encoder_lr > 0.0)) throw ConfigError("fine-tune learning rates must be positive");
  if (weight_decay < 0.0) throw ConfigError("fine-tune weight_decay must be >= 0");
  if (!(sparsity >= 0.0)) throw ConfigError("sparsity coefficient must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (head_only_epochs < 0 || head_only_epochs > max_epochs)
    throw ConfigError("head_only_epochs must lie in [0, max_epochs]");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (folds < 2 || validation_folds < 2) throw ConfigError("fold counts must be >= 2");
  if (batch_size < 2) throw ConfigError("fine-tune batch_size must be >= 2");
  if (precision_k < 1) throw ConfigError("precision_k must be >= 1");
  for (int f : run_folds)
    if (f < 0 || f >= folds) throw ConfigError("run_folds entry outside [0, folds)");
}

void to_json(json& j, const FinetuneConfig& c) {
  j = json{{"head_lr", c.head_lr},
           {"encoder_lr", c.encoder_lr},
           {"weight_decay", c.weight_decay},
           {"head_only_epochs", c.head_only_epochs},
           {"max_epochs", c.max_epochs},
           {"early_stop_patience", c.early_stop_patience},
           {"sparsity", c.sparsity},
           {"folds", c.folds},
           {"validation_folds", c.validation_folds},
           {"batch_size", c.batch_size},
           {"precision_k", c.precision_k},
           {"seed", c.seed},
           {"run_folds", c.run_folds}};
}

void from_json(const json& j, FinetuneConfig& c) {
  j.at("head_lr").get_to(c.head_lr);
  j.at("encoder_lr").get_to(c.encoder_lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("head_only_epochs").get_to(c.head_only_epochs);
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("early_stop_patience").get_to(c.early_stop_patience);
  j.at("sparsity").get_to(c.sparsity);
  j.at("folds").get_to(c.folds);
  j.at("validation_folds").get_to(c.validation_folds);
  j.at("batch_size").get_to(c.batch_size);
  j.at("precision_k").get_to(c.precision_k);
  j.at("seed").get_to(c.seed);
  j.at("run_folds").get_to(c.run_folds);
}

double finetune_objective(const EvidenceMaps<float>& maps, std::span<const int> labels,
                          std::span<const double> weights, double sparsity, Tensor<float>* grad) {
  const Tensor<float> logits = evidence_logits(maps);
  Tensor<float> g_logits;
  double loss = weighted_cross_entropy(logits, labels, weights, grad ? &g_logits : nullptr);
  const std::size_t total = maps.values.size();
  const std::size_t plane = maps.rows() * maps.cols();
  if (sparsity > 0.0) {
    double abs_sum = 0.0;
    for (float v : maps.values.values()) abs_sum += std::abs(double(v));
    loss += sparsity * abs_sum / static_cast<double>(total);
  }
  if (grad) {
    *grad = Tensor<float>(maps.values.shape());
    const double l1 = sparsity / static_cast<double>(total);
    for (std::size_t i = 0; i < maps.batch(); ++i)
      for (std::size_t c = 0; c < maps.classes(); ++c) {
        const double g = g_logits.at(i, c) / static_cast<double>(plane);
        const std::size_t base = (i * maps.classes() + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const float e = maps.values[base + p];
          const double s = e > 0 ? l1 : (e < 0 ? -l1 : 0.0);
          (*grad)[base + p] = static_cast<float>(g + s);
        }
      }
  }
  return loss;
}

EvidenceOutput forward_with_evidence(const Model& model, const Tensor<float>& images) {
  if (!model.head) throw ConfigError("model has no evidence head; attach one first");
  EvidenceOutput out{model.head->evidence(model.encoder.encode(images)), {}};
  out.logits = evidence_logits(out.maps);
  return out;
}

namespace {

Tensor<float> image_batch(const DatasetManifest& m, std::span<const std::size_t> idx) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) {
    if (!m.records[i].decoded()) throw DataError("record " + m.records[i].id + " is not decoded");
    ptrs.push_back(&m.records[i].pixels);
  }
  return to_batch(ptrs);
}

// Rows `idx` of an N x ... tensor.
Tensor<float> take(const Tensor<float>& t, std::span<const std::size_t> idx) {
  std::vector<std::size_t> shape = t.shape();
  const std::size_t per = t.size() / shape[0];
  shape[0] = idx.size();
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data() + idx[i] * per, per, out.data() + i * per);
  return out;
}

FeatureMap<float> encode_all(const Model& model, const DatasetManifest& m,
                             std::span<const std::size_t> idx) {
  constexpr std::size_t kChunk = 128;
  FeatureMap<float> all;
  std::vector<float> values;
  std::vector<std::size_t> shape;
  for (std::size_t lo = 0; lo < idx.size(); lo += kChunk) {
    const auto part = idx.subspan(lo, std::min(kChunk, idx.size() - lo));
    FeatureMap<float> fm = model.encoder.encode(image_batch(m, part));
    values.insert(values.end(), fm.values.values().begin(), fm.values.values().end());
    shape = fm.values.shape();
    all.geometry = fm.geometry;
  }
  shape[0] = idx.size();
  all.values = Tensor<float>(shape);
  all.values.storage() = std::move(values);
  return all;
}

std::vector<int> labels_of(const DatasetManifest& m, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) {
    if (!m.records[i].label) throw DataError("record " + m.records[i].id + " has no label");
    out.push_back(*m.records[i].label);
  }
  return out;
}

void require_all_classes(std::span<const int> labels, int n_classes, int fold, const char* part) {
  std::vector<int> seen(n_classes, 0);
  for (int y : labels) seen[y] = 1;
  for (int c = 0; c < n_classes; ++c)
    if (!seen[c])
      throw DataError("fold " + std::to_string(fold) + " " + part + " part has no class " +
                      std::to_string(c) + " samples; AUROC is undefined");
}

double evaluate_auroc(const Model& model, const DatasetManifest& m, std::span<const std::size_t> idx,
                      std::span<const int> labels, const FeatureMap<float>* cached) {
  Tensor<float> logits;
  if (cached) {
    logits = evidence_logits(model.head->evidence(*cached));
  } else {
    constexpr std::size_t kChunk = 128;
    std::vector<float> all;
    for (std::size_t lo = 0; lo < idx.size(); lo += kChunk) {
      const auto part = idx.subspan(lo, std::min(kChunk, idx.size() - lo));
      const Tensor<float> l = forward_with_evidence(model, image_batch(m, part)).logits;
      all.insert(all.end(), l.values().begin(), l.values().end());
    }
    logits = Tensor<float>({idx.size(), static_cast<std::size_t>(model.head->n_classes())});
    logits.storage() = std::move(all);
  }
  return auroc(softmax_rows(logits), labels);
}

FoldResult run_fold(const Checkpoint& pretrained, const DatasetManifest& m, const FinetuneConfig& cfg,
                    const SplitSpec& split, int fold, const FinetuneOptions& options) {
  const int n_classes = m.n_classes;
  const std::vector<std::size_t> test = split.records_in_fold(m, fold);
  const std::vector<std::size_t> train = split.records_outside_fold(m, fold);

  std::vector<std::string> groups;
  std::vector<std::optional<int>> glabels;
  for (std::size_t i : train) groups.push_back(m.records[i].participant_id), glabels.push_back(m.records[i].label);
  const SplitSpec inner = stratified_group_split(group_strata(groups, glabels), cfg.validation_folds,
                                                 cfg.seed + 7919 * static_cast<std::uint64_t>(fold));
  std::vector<std::size_t> fit, val;
  for (std::size_t i : train) (inner.fold_of.at(m.records[i].participant_id) == 0 ? val : fit).push_back(i);

  const std::vector<int> y_fit = labels_of(m, fit), y_val = labels_of(m, val), y_test = labels_of(m, test);
  require_all_classes(y_fit, n_classes, fold, "training");
  require_all_classes(y_val, n_classes, fold, "validation");
  require_all_classes(y_test, n_classes, fold, "test");
  const std::vector<double> weights = class_weights(y_fit, n_classes);

  Model model = restore_model(pretrained);
  model.attach_head(n_classes, cfg.seed + 104729 * static_cast<std::uint64_t>(fold + 1));
  OptimizerConfig adamw;
  adamw.kind = OptimizerKind::kAdamW;
  adamw.weight_decay = cfg.weight_decay;
  Optimizer head_opt(adamw), encoder_opt(adamw);
  ParameterList<float> head_params = model.head->parameters();
  ParameterList<float> encoder_params = model.encoder_parameters();

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(fold));
  FoldResult result;
  result.fold = fold;
  result.best_validation_auroc = -1.0;

  std::optional<FeatureMap<float>> fit_cache, val_cache;
  if (cfg.head_only_epochs > 0) {
    fit_cache = encode_all(model, m, fit);
    val_cache = encode_all(model, m, val);
  }

  std::vector<std::size_t> order(fit.size());
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const bool head_only = epoch <= cfg.head_only_epochs;
    if (!head_only) fit_cache.reset(), val_cache.reset();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo + 2 <= order.size(); lo += bs) {
      const std::span<const std::size_t> pos(order.data() + lo, std::min(bs, order.size() - lo));
      std::vector<std::size_t> rows(pos.begin(), pos.end());
      std::vector<int> y;
      for (std::size_t p : pos) y.push_back(y_fit[p]);
      zero_grad(head_params);
      Tensor<float> g_ev;
      double loss;
      if (head_only) {
        FeatureMap<float> fm{take(fit_cache->values, rows), fit_cache->geometry};
        const EvidenceMaps<float> maps = model.head->forward(fm, true);
        loss = finetune_objective(maps, y, weights, cfg.sparsity, &g_ev);
        model.head->backward(g_ev, false);
      } else {
        std::vector<std::size_t> idx;
        for (std::size_t p : pos) idx.push_back(fit[p]);
        zero_grad(encoder_params);
        const FeatureMap<float> fm = model.encoder.forward(image_batch(m, idx), Mode::kTrain, true);
        const EvidenceMaps<float> maps = model.head->forward(fm, true);
        loss = finetune_objective(maps, y, weights, cfg.sparsity, &g_ev);
        model.encoder.backward(model.head->backward(g_ev, true), false);
      }
      if (!std::isfinite(loss)) throw TrainingError("non-finite fine-tuning loss in fold " + std::to_string(fold));
      head_opt.step(head_params, cfg.head_lr);
      if (!head_only) encoder_opt.step(encoder_params, cfg.encoder_lr);
      loss_sum += loss * pos.size();
      seen += pos.size();
    }
    const double mean_loss = loss_sum / static_cast<double>(seen);
    const double val_auroc = evaluate_auroc(model, m, val, y_val, val_cache ? &*val_cache : nullptr);
    result.loss_history.push_back(mean_loss);
    result.validation_history.push_back(val_auroc);
    if (options.on_epoch) options.on_epoch(fold, epoch, mean_loss, val_auroc);
    if (options.inspect) options.inspect(fold, epoch, model);
    if (val_auroc > result.best_validation_auroc) {
      result.best_validation_auroc = val_auroc;
      result.best_epoch = epoch;
      result.best = capture(model, 4, epoch, options.run_config, rng);
    }
    if (epoch - result.best_epoch >= cfg.early_stop_patience) break;
  }

  load_weights(model, result.best);
  result.auroc = evaluate_auroc(model, m, test, y_test, nullptr);

  // Precision of the top evidence positions on annotated diseased test images.
  double prec_sum = 0.0;
  for (std::size_t t = 0; t < test.size(); ++t) {
    const ImageRecord& r = m.records[test[t]];
    if (y_test[t] <= 0 || !r.lesion_mask || r.lesion_mask->area() == 0) continue;
    const std::size_t one[] = {test[t]};
    const EvidenceOutput ev = forward_with_evidence(model, image_batch(m, one));
    prec_sum += patch_precision_at_k(ev.maps, 0, y_test[t], r.lesion_mask, cfg.precision_k);
    ++result.precision_images;
  }
  result.precision_at_k = result.precision_images ? prec_sum / result.precision_images : 0.0;

  if (!options.out_dir.empty())
    save_checkpoint(options.out_dir / ("fold" + std::to_string(fold) + "_best.ckpt"), result.best);
  return result;
}

}  // namespace

std::vector<FoldResult> finetune(const Checkpoint& pretrained, const DatasetManifest& manifest,
                                 const FinetuneConfig& config, const SplitSpec& split,
                                 const FinetuneOptions& options) {
  config.validate();
  if (!manifest.fully_labeled()) throw DataError("fine-tuning needs a fully labeled manifest");
  if (manifest.n_classes < 2) throw DataError("fine-tuning needs at least 2 classes");
  if (split.folds != config.folds)
    throw ConfigError("split has " + std::to_string(split.folds) + " folds, config expects " +
                      std::to_string(config.folds));
  std::vector<int> folds = config.run_folds;
  if (folds.empty()) {
    folds.resize(config.folds);
    std::iota(folds.begin(), folds.end(), 0);
  }
  std::vector<FoldResult> out;
  for (int f : folds) out.push_back(run_fold(pretrained, manifest, config, split, f, options));
  if (!options.out_dir.empty()) write_fold_csv(options.out_dir / "folds.csv", out);
  return out;
}

SweepResult sparsity_sweep(const Checkpoint& pretrained, const DatasetManifest& manifest,
                           std::span<const double> lambdas, const FinetuneConfig& config,
                           const SplitSpec& split, double tolerance, const FinetuneOptions& options) {
  if (lambdas.empty()) throw ConfigError("sparsity sweep needs at least one lambda");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] >= 0.0)) throw ConfigError("sparsity values must be nonnegative");
    if (i > 0 && !(lambdas[i] > lambdas[i - 1])) throw ConfigError("sparsity values must be ascending");
  }
  SweepResult sweep;
  for (double lambda : lambdas) {
    FinetuneConfig c = config;
    c.sparsity = lambda;
    FinetuneOptions o = options;
    if (!options.out_dir.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "lambda_%g", lambda);
      o.out_dir = options.out_dir / buf;
    }
    SweepRow row;
    row.lambda = lambda;
    row.folds = finetune(pretrained, manifest, c, split, o);
    for (const auto& f : row.folds) {
      row.mean_auroc += f.auroc / row.folds.size();
      row.mean_precision_at_k += f.precision_at_k / row.folds.size();
    }
    sweep.rows.push_back(std::move(row));
  }
  const double reference = sweep.rows.front().mean_auroc;
  for (std::size_t i = 0; i < sweep.rows.size(); ++i)
    if (sweep.rows[i].mean_auroc >= reference - tolerance) sweep.recommended_index = i;
  sweep.recommended_lambda = sweep.rows[sweep.recommended_index].lambda;
  if (!options.out_dir.empty()) write_sweep_csv(options.out_dir / "sweep.csv", sweep);
  return sweep;
}

void write_fold_csv(const std::filesystem::path& path, std::span<const FoldResult> folds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "fold,best_epoch,auroc\n";
  char buf[128];
  for (const auto& r : folds) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g\n", r.fold, r.best_epoch, r.auroc);
    f << buf;
  }
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "lambda,mean_auroc,mean_precision_at_k\n";
  char buf[160];
  for (const auto& r : sweep.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", r.lambda, r.mean_auroc, r.mean_precision_at_k);
    f << buf;
  }
}

}  // namespace bagclr
