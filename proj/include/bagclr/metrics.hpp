#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bagclr/data.hpp"
#include "bagclr/encoder.hpp"
#include "bagclr/evidence.hpp"

namespace bagclr {

class Model;

// ---------------------------------------------------------------- AUROC

/// Rank-based (Mann-Whitney) AUROC with midranks for ties. `positive` marks
/// the positive samples. Throws DataError when either side is empty.
double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// scores is M x n. n == 2 uses column 1; n > 2 averages one-vs-rest AUROC
/// over classes. Every class must be present.
double auroc(const Tensor<double>& scores, std::span<const int> labels);

// ---------------------------------------------------------- linear probe

struct ProbeConfig {
  double alpha = 0.5;  // L1 share of the elastic-net penalty
  std::vector<double> strengths = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2};
  int validation_folds = 5;  // one fold of the training groups validates
  int max_iterations = 2000;
  double tolerance = 1e-7;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Multinomial logistic regression with class-balanced weights minimizing
///   sum_i w_i CE_i / sum_i w_i + s * (alpha |W|_1 + (1 - alpha) / 2 |W|^2)
/// (intercepts unpenalized), solved by accelerated proximal gradient.
struct LogisticModel {
  Tensor<double> weights;  // D x K
  std::vector<double> intercepts;
  std::vector<double> mean, scale;  // feature standardization

  Tensor<double> predict_proba(const Tensor<double>& features) const;
};

LogisticModel fit_elastic_net(const Tensor<double>& features, std::span<const int> labels,
                              int n_classes, double strength, const ProbeConfig& config);

struct ProbeResult {
  double test_auroc = 0.0;
  double validation_auroc = 0.0;
  double strength = 0.0;
  LogisticModel model;
};

/// Selects the strength on a stratified group-disjoint validation part of the
/// training indices (ties go to the stronger penalty), refits on all training
/// indices and reports test AUROC.
ProbeResult linear_probe(const Tensor<double>& features, std::span<const int> labels,
                         std::span<const std::string> groups, std::span<const std::size_t> train,
                         std::span<const std::size_t> test, const ProbeConfig& config);

// ------------------------------------------------------------------ kNN

/// Exact k-nearest-neighbor search in Euclidean space. Neighbors are ordered
/// by (squared distance, index).
class KdTree {
 public:
  KdTree(const Tensor<double>& points);
  std::vector<std::size_t> nearest(std::span<const double> query, std::size_t k) const;

 private:
  struct Node {
    std::size_t point;
    int axis;
    int left = -1, right = -1;
  };
  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth);

  Tensor<double> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

std::vector<std::size_t> brute_force_neighbors(const Tensor<double>& points,
                                               std::span<const double> query, std::size_t k);

/// Class scores (M_test x n) = label fractions among the k nearest training points.
Tensor<double> knn_scores(const Tensor<double>& train_points, std::span<const int> train_labels,
                          int n_classes, const Tensor<double>& test_points, std::size_t k);

struct EmbeddingDataset {
  std::vector<std::string> ids;
  std::vector<std::string> groups;
  Tensor<float> points;  // M x 2
  std::vector<int> labels;  // -1 when unlabeled

  void validate() const;
};

/// Throws ConfigError when k >= the number of training points.
double knn_auroc(const EmbeddingDataset& data, int n_classes, std::size_t k,
                 std::span<const std::size_t> train, std::span<const std::size_t> test);

// ------------------------------------------------------- patch precision

/// Precision of the k highest-evidence positions (ties by row-major order):
/// a position hits when its receptive-field rectangle holds a lesion pixel.
double patch_precision_at_k(std::span<const float> evidence, const PatchGeometry& geometry,
                            const Mask& mask, int k);
double patch_precision_at_k(const EvidenceMaps<float>& maps, std::size_t image, int cls,
                            const std::optional<Mask>& mask, int k);

// ------------------------------------------------------------ embedding

/// 2-D coordinates of every record. Throws ConfigError for a 128-D projector.
EmbeddingDataset embed_dataset(const Model& model, const DatasetManifest& manifest,
                               std::size_t chunk = 256);

/// Encoder representations (GAP features), M x D in double.
Tensor<double> encode_dataset(const Model& model, const DatasetManifest& manifest,
                              std::size_t chunk = 256);

struct MetricRow {
  std::string dataset;
  std::string metric;
  double value = 0.0;
};

/// Appends rows to `dataset,metric,value` (header written for new files).
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace bagclr
