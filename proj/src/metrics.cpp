#include "bagclr/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>

#include "bagclr/model.hpp"

namespace bagclr {

// ---------------------------------------------------------------- AUROC

double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ShapeError("auroc: score and label counts differ");
  const std::size_t m = scores.size();
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("auroc: non-finite score");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j < m && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) rank_sum += midrank, ++n_pos;
    i = j;
  }
  const std::size_t n_neg = m - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auroc needs both positive and negative samples");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double auroc(const Tensor<double>& scores, std::span<const int> labels) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size())
    throw ShapeError("auroc: scores must be M x n with one row per label");
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  if (n < 2) throw DataError("auroc needs at least 2 classes");
  std::vector<std::size_t> counts(n, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n) throw DataError("auroc: label outside [0, n)");
    ++counts[y];
  }
  for (std::size_t c = 0; c < n; ++c)
    if (counts[c] == 0) throw DataError("auroc: class " + std::to_string(c) + " is absent");
  auto one_vs_rest = [&](std::size_t c) {
    std::vector<double> s(m);
    std::vector<std::uint8_t> pos(m);
    for (std::size_t i = 0; i < m; ++i) s[i] = scores.at(i, c), pos[i] = labels[i] == int(c);
    return binary_auroc(s, pos);
  };
  if (n == 2) return one_vs_rest(1);
  double sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) sum += one_vs_rest(c);
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------- linear probe

void ProbeConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("probe alpha must lie in [0, 1]");
  if (strengths.empty()) throw ConfigError("probe strength grid is empty");
  for (double s : strengths)
    if (!(s >= 0.0)) throw ConfigError("probe strengths must be nonnegative");
  if (validation_folds < 2) throw ConfigError("probe validation_folds must be >= 2");
  if (max_iterations < 1) throw ConfigError("probe max_iterations must be >= 1");
}

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat standardized(const Tensor<double>& x, const std::vector<double>& mean,
                 const std::vector<double>& scale) {
  const std::size_t m = x.dim(0), d = x.dim(1);
  Mat out(m, d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = (x.at(i, j) - mean[j]) / scale[j];
  return out;
}

// Row-wise softmax of X W + b into P; returns sum_i w_i * CE_i.
double softmax_loss(const Mat& x, const Mat& w, const Eigen::RowVectorXd& b,
                    std::span<const int> y, const Eigen::VectorXd& sw, Mat& p) {
  p = x * w;
  p.rowwise() += b;
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    const double z = p.row(i).sum();
    p.row(i) /= z;
    total -= sw(i) * std::log(std::max(p(i, y[i]), 1e-300));
  }
  return total;
}

}  // namespace

Tensor<double> LogisticModel::predict_proba(const Tensor<double>& features) const {
  const Mat x = standardized(features, mean, scale);
  const std::size_t d = weights.dim(0), k = weights.dim(1);
  Mat w(d, k);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) w(i, j) = weights.at(i, j);
  Mat logits = x * w;
  Tensor<double> lt({static_cast<std::size_t>(logits.rows()), k});
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) lt.at(i, j) = logits(i, j) + intercepts[j];
  return softmax_rows(lt);
}

LogisticModel fit_elastic_net(const Tensor<double>& features, std::span<const int> labels,
                              int n_classes, double strength, const ProbeConfig& config) {
  const std::size_t m = features.dim(0), d = features.dim(1);
  const std::size_t k = static_cast<std::size_t>(n_classes);
  if (labels.size() != m) throw ShapeError("probe: label count mismatch");
  LogisticModel model;
  model.mean.assign(d, 0.0);
  model.scale.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += features.at(i, j);
    const double mu = s / m;
    for (std::size_t i = 0; i < m; ++i) ss += (features.at(i, j) - mu) * (features.at(i, j) - mu);
    const double sd = std::sqrt(ss / m);
    model.mean[j] = mu;
    model.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  const Mat x = standardized(features, model.mean, model.scale);
  const std::vector<double> cw = class_weights(labels, n_classes);
  Eigen::VectorXd sw(m);
  for (std::size_t i = 0; i < m; ++i) sw(i) = cw[labels[i]];
  sw /= sw.sum();

  const double l1 = strength * config.alpha, l2 = strength * (1.0 - config.alpha);
  auto smooth = [&](const Mat& w, const Eigen::RowVectorXd& b, Mat& p) {
    return softmax_loss(x, w, b, labels, sw, p) + 0.5 * l2 * w.squaredNorm();
  };
  auto gradient = [&](const Mat& w, const Mat& p, Mat& gw, Eigen::RowVectorXd& gb) {
    Mat g = p;
    for (std::size_t i = 0; i < m; ++i) g(i, labels[i]) -= 1.0;
    g.array().colwise() *= sw.array();
    gw = x.transpose() * g + l2 * w;
    gb = g.colwise().sum();
  };
  auto soft = [](const Mat& v, double t) {
    return Mat(v.array().sign() * (v.array().abs() - t).max(0.0));
  };

  Mat w = Mat::Zero(d, k), w_prev = w, yw = w, p, gw;
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k), b_prev = b, yb = b, gb;
  double lip = 1.0, t = 1.0;
  for (int it = 0; it < config.max_iterations; ++it) {
    const double fy = smooth(yw, yb, p);
    gradient(yw, p, gw, gb);
    Mat wn;
    Eigen::RowVectorXd bn;
    for (int bt = 0; bt < 60; ++bt) {
      wn = soft(yw - gw / lip, l1 / lip);
      bn = yb - gb / lip;
      Mat pn;
      const double fx = smooth(wn, bn, pn);
      const double quad = fy + (gw.array() * (wn - yw).array()).sum() + (gb.array() * (bn - yb).array()).sum() +
                          0.5 * lip * ((wn - yw).squaredNorm() + (bn - yb).squaredNorm());
      if (fx <= quad + 1e-12) break;
      lip *= 2.0;
    }
    const double change = std::sqrt((wn - w).squaredNorm() + (bn - b).squaredNorm());
    const double size = std::max(1.0, std::sqrt(wn.squaredNorm() + bn.squaredNorm()));
    w_prev = w, b_prev = b;
    w = wn, b = bn;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    yw = w + ((t - 1.0) / t_next) * (w - w_prev);
    yb = b + ((t - 1.0) / t_next) * (b - b_prev);
    t = t_next;
    if (change / size < config.tolerance) break;
  }

  model.weights = Tensor<double>({d, k});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) model.weights.at(i, j) = w(i, j);
  model.intercepts.assign(b.data(), b.data() + k);
  return model;
}

namespace {

Tensor<double> gather_rows(const Tensor<double>& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.dim(1);
  Tensor<double> out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data() + idx[i] * d, d, out.data() + i * d);
  return out;
}

std::vector<int> gather(std::span<const int> v, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

ProbeResult linear_probe(const Tensor<double>& features, std::span<const int> labels,
                         std::span<const std::string> groups, std::span<const std::size_t> train,
                         std::span<const std::size_t> test, const ProbeConfig& config) {
  config.validate();
  if (features.rank() != 2 || features.dim(0) != labels.size() || groups.size() != labels.size())
    throw ShapeError("probe: features, labels and groups must have one row per sample");
  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;

  // Group-disjoint, stratified validation part of the training indices.
  std::vector<std::string> train_groups;
  std::vector<std::optional<int>> train_labels;
  for (std::size_t i : train) train_groups.push_back(groups[i]), train_labels.push_back(labels[i]);
  const SplitSpec inner =
      stratified_group_split(group_strata(train_groups, train_labels), config.validation_folds, config.seed);
  std::vector<std::size_t> fit_idx, val_idx;
  for (std::size_t i : train) (inner.fold_of.at(groups[i]) == 0 ? val_idx : fit_idx).push_back(i);

  const Tensor<double> x_fit = gather_rows(features, fit_idx), x_val = gather_rows(features, val_idx);
  const std::vector<int> y_fit = gather(labels, fit_idx), y_val = gather(labels, val_idx);
  ProbeResult result;
  result.validation_auroc = -1.0;
  for (double s : config.strengths) {
    const LogisticModel m = fit_elastic_net(x_fit, y_fit, n_classes, s, config);
    const double a = auroc(m.predict_proba(x_val), y_val);
    if (a > result.validation_auroc || (a == result.validation_auroc && s > result.strength)) {
      result.validation_auroc = a;
      result.strength = s;
    }
  }
  const std::vector<int> y_train = gather(labels, train);
  result.model = fit_elastic_net(gather_rows(features, train), y_train, n_classes, result.strength, config);
  result.test_auroc = auroc(result.model.predict_proba(gather_rows(features, test)), gather(labels, test));
  return result;
}

// ------------------------------------------------------------------ kNN

namespace {

struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

double squared_distance(const double* a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

}  // namespace

KdTree::KdTree(const Tensor<double>& points) : points_(points) {
  if (points.rank() != 2) throw ShapeError("kd-tree points must be M x d");
  std::vector<std::size_t> idx(points.dim(0));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  nodes_.reserve(idx.size());
  root_ = build(idx, 0, idx.size(), 0);
}

int KdTree::build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  const std::size_t d = points_.dim(1);
  const int axis = static_cast<int>(depth % d);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](std::size_t a, std::size_t b) {
                     const double va = points_.at(a, axis), vb = points_.at(b, axis);
                     return va < vb || (va == vb && a < b);
                   });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis});
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[node].left = left;
  nodes_[node].right = right;
  return node;
}

std::vector<std::size_t> KdTree::nearest(std::span<const double> query, std::size_t k) const {
  const std::size_t d = points_.dim(1);
  if (query.size() != d) throw ShapeError("kd-tree query has the wrong dimension");
  std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top
  auto visit = [&](auto&& self, int n) -> void {
    if (n < 0) return;
    const Node& node = nodes_[n];
    const Candidate c{squared_distance(points_.data() + node.point * d, query), node.point};
    if (heap.size() < k) heap.push(c);
    else if (c < heap.top()) heap.pop(), heap.push(c);
    const double diff = query[node.axis] - points_.at(node.point, node.axis);
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    self(self, near);
    // <= keeps equal-distance points with smaller indices reachable.
    if (heap.size() < k || diff * diff <= heap.top().d2) self(self, far);
  };
  visit(visit, root_);
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) out[i] = heap.top().index, heap.pop();
  return out;
}

std::vector<std::size_t> brute_force_neighbors(const Tensor<double>& points,
                                               std::span<const double> query, std::size_t k) {
  const std::size_t m = points.dim(0), d = points.dim(1);
  std::vector<Candidate> all(m);
  for (std::size_t i = 0; i < m; ++i) all[i] = {squared_distance(points.data() + i * d, query), i};
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, m); ++i) out.push_back(all[i].index);
  return out;
}

Tensor<double> knn_scores(const Tensor<double>& train_points, std::span<const int> train_labels,
                          int n_classes, const Tensor<double>& test_points, std::size_t k) {
  if (k < 1 || k >= train_points.dim(0))
    throw ConfigError("k = " + std::to_string(k) + " must lie in [1, training size " +
                      std::to_string(train_points.dim(0)) + ")");
  const KdTree tree(train_points);
  const std::size_t m = test_points.dim(0), d = test_points.dim(1);
  Tensor<double> scores({m, static_cast<std::size_t>(n_classes)});
  for (std::size_t i = 0; i < m; ++i) {
    const auto nn = tree.nearest({test_points.data() + i * d, d}, k);
    for (std::size_t j : nn) scores.at(i, train_labels[j]) += 1.0 / static_cast<double>(k);
  }
  return scores;
}

void EmbeddingDataset::validate() const {
  if (points.rank() != 2 || points.dim(0) != ids.size() || labels.size() != ids.size())
    throw ShapeError("embedding dataset: points, ids and labels disagree in length");
  for (float v : points.values())
    if (!std::isfinite(v)) throw DataError("embedding dataset holds a non-finite point");
}

double knn_auroc(const EmbeddingDataset& data, int n_classes, std::size_t k,
                 std::span<const std::size_t> train, std::span<const std::size_t> test) {
  data.validate();
  const Tensor<double> pts = data.points.cast<double>();
  std::vector<int> y_train = gather(data.labels, train), y_test = gather(data.labels, test);
  for (int y : y_train)
    if (y < 0 || y >= n_classes) throw DataError("kNN: unlabeled or out-of-range training point");
  const Tensor<double> scores = knn_scores(gather_rows(pts, train), y_train, n_classes, gather_rows(pts, test), k);
  return auroc(scores, y_test);
}

// ------------------------------------------------------- patch precision

double patch_precision_at_k(std::span<const float> evidence, const PatchGeometry& geo,
                            const Mask& mask, int k) {
  const std::size_t cells = static_cast<std::size_t>(geo.rows) * geo.cols;
  if (evidence.size() != cells) throw ShapeError("evidence map does not match the patch grid");
  if (k < 1 || static_cast<std::size_t>(k) > cells)
    throw ConfigError("k must lie in [1, " + std::to_string(cells) + "]");
  if (mask.height != geo.image_height || mask.width != geo.image_width)
    throw ShapeError("mask size differs from the encoder input size");
  // Summed-area table of the mask.
  const int h = mask.height, w = mask.width;
  std::vector<int> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      sat[(r + 1) * (w + 1) + c + 1] = mask.at(r, c) + sat[r * (w + 1) + c + 1] +
                                       sat[(r + 1) * (w + 1) + c] - sat[r * (w + 1) + c];
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return evidence[a] > evidence[b]; });
  int hits = 0;
  for (int t = 0; t < k; ++t) {
    const int i = static_cast<int>(order[t] / geo.cols), j = static_cast<int>(order[t] % geo.cols);
    const PixelRect r = geo.rect(i, j);
    const int s = sat[(r.bottom + 1) * (w + 1) + r.right + 1] - sat[r.top * (w + 1) + r.right + 1] -
                  sat[(r.bottom + 1) * (w + 1) + r.left] + sat[r.top * (w + 1) + r.left];
    if (s > 0) ++hits;
  }
  return static_cast<double>(hits) / k;
}

double patch_precision_at_k(const EvidenceMaps<float>& maps, std::size_t image, int cls,
                            const std::optional<Mask>& mask, int k) {
  if (!mask) throw DataError("patch precision needs a lesion mask");
  return patch_precision_at_k(maps.map(image, cls), maps.geometry, *mask, k);
}

// ------------------------------------------------------------ embedding

namespace {

template <typename Fn>
void for_chunks(const Model& model, const DatasetManifest& manifest, std::size_t chunk, Fn&& fn) {
  const int size = model.encoder.config().image_size;
  std::vector<Image> resized;
  for (std::size_t lo = 0; lo < manifest.records.size(); lo += chunk) {
    const std::size_t hi = std::min(manifest.records.size(), lo + chunk);
    std::vector<const Image*> batch;
    resized.clear();
    resized.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      const ImageRecord& r = manifest.records[i];
      if (!r.decoded()) throw DataError("record " + r.id + " is not decoded");
      if (r.pixels.height == size && r.pixels.width == size) {
        batch.push_back(&r.pixels);
      } else {
        resized.push_back(resize_bilinear(r.pixels, size, size));
        batch.push_back(&resized.back());
      }
    }
    fn(lo, to_batch(batch));
  }
}

}  // namespace

EmbeddingDataset embed_dataset(const Model& model, const DatasetManifest& manifest,
                               std::size_t chunk) {
  if (model.projector.out_dim() != 2)
    throw ConfigError("checkpoint projector is " + std::to_string(model.projector.out_dim()) +
                      "-D; anneal to 2-D first (run pretraining stages 2 and 3)");
  EmbeddingDataset out;
  out.points = Tensor<float>({manifest.records.size(), 2});
  for (const auto& r : manifest.records) {
    out.ids.push_back(r.id);
    out.groups.push_back(r.participant_id);
    out.labels.push_back(r.label.value_or(-1));
  }
  for_chunks(model, manifest, chunk, [&](std::size_t lo, const Tensor<float>& batch) {
    const Tensor<float> z = model.embed(batch);
    std::copy(z.values().begin(), z.values().end(), out.points.data() + lo * 2);
  });
  return out;
}

Tensor<double> encode_dataset(const Model& model, const DatasetManifest& manifest,
                              std::size_t chunk) {
  const std::size_t d = static_cast<std::size_t>(model.encoder.config().feature_dim());
  Tensor<double> out({manifest.records.size(), d});
  for_chunks(model, manifest, chunk, [&](std::size_t lo, const Tensor<float>& batch) {
    const Tensor<float> pooled = global_average_pool(model.encoder.encode(batch));
    for (std::size_t i = 0; i < pooled.size(); ++i) out.data()[lo * d + i] = pooled[i];
  });
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("cannot write " + path.string());
  if (fresh) f << "dataset,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    f << r.dataset << ',' << r.metric << ',' << buf << '\n';
  }
}

}  // namespace bagclr
