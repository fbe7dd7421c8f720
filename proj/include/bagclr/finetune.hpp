#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "bagclr/checkpoint.hpp"
#include "bagclr/metrics.hpp"

namespace bagclr {

struct FinetuneConfig {
  double head_lr = 1e-4;
  double encoder_lr = 1e-5;
  double weight_decay = 1e-4;
  int head_only_epochs = 5;
  int max_epochs = 50;
  int early_stop_patience = 10;
  double sparsity = 0.0;  // lambda on mean |evidence|
  int folds = 5;
  int validation_folds = 5;  // one fold of the training participants validates
  int batch_size = 32;
  int precision_k = 10;
  std::uint64_t seed = 0;
  std::vector<int> run_folds;  // empty: every fold

  void validate() const;
};

void to_json(json& j, const FinetuneConfig& c);
void from_json(const json& j, FinetuneConfig& c);

struct FoldResult {
  int fold = 0;
  double auroc = 0.0;  // test part of the fold, best-epoch weights
  int best_epoch = 0;  // 1-based
  double best_validation_auroc = 0.0;
  std::vector<double> loss_history;  // mean training objective per epoch
  std::vector<double> validation_history;
  // Mean precision@k over test images with a positive label and a nonempty
  // mask, read off the evidence map of the image's own class.
  double precision_at_k = 0.0;
  int precision_images = 0;
  Checkpoint best;
};

/// Training objective: weighted-mean cross-entropy of the spatially averaged
/// evidence plus sparsity * mean |E| over every evidence value. Fills the
/// gradient w.r.t. the evidence maps when asked.
double finetune_objective(const EvidenceMaps<float>& maps, std::span<const int> labels,
                          std::span<const double> class_weights, double sparsity,
                          Tensor<float>* grad_evidence);

struct FinetuneOptions {
  std::filesystem::path out_dir;  // fold CSV and best checkpoints; empty: none
  json run_config = json::object();
  std::function<void(int fold, int epoch, double loss, double val_auroc)> on_epoch;
  // Sees the fold's model after every epoch (before early-stopping bookkeeping).
  std::function<void(int fold, int epoch, Model& model)> inspect;
};

/// Cross-validated fine-tuning of an evidence head on a pretrained encoder.
/// Throws DataError when a fold part lacks a class.
std::vector<FoldResult> finetune(const Checkpoint& pretrained, const DatasetManifest& manifest,
                                 const FinetuneConfig& config, const SplitSpec& split,
                                 const FinetuneOptions& options = {});

struct SweepRow {
  double lambda = 0.0;
  double mean_auroc = 0.0;
  double mean_precision_at_k = 0.0;
  std::vector<FoldResult> folds;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double recommended_lambda = 0.0;
  std::size_t recommended_index = 0;
};

/// One fine-tuning run per lambda (ascending). The recommendation is the
/// largest lambda whose AUROC stays within `tolerance` of the first entry's.
SweepResult sparsity_sweep(const Checkpoint& pretrained, const DatasetManifest& manifest,
                           std::span<const double> lambdas, const FinetuneConfig& config,
                           const SplitSpec& split, double tolerance = 0.01,
                           const FinetuneOptions& options = {});

void write_fold_csv(const std::filesystem::path& path, std::span<const FoldResult> folds);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep);

/// Evidence maps and logits for a batch in eval mode.
struct EvidenceOutput {
  EvidenceMaps<float> maps;
  Tensor<float> logits;
};
EvidenceOutput forward_with_evidence(const Model& model, const Tensor<float>& images);

}  // namespace bagclr
