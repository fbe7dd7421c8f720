#include "bagclr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace bagclr {

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

// ------------------------------------------------------------- manifest

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw DataError("duplicate image id '" + r.id + "'");
    if (r.label && (*r.label < 0 || *r.label >= n_classes))
      throw DataError("label " + std::to_string(*r.label) + " of '" + r.id +
                      "' outside [0, " + std::to_string(n_classes) + ")");
    if (r.decoded() && r.lesion_mask &&
        (r.lesion_mask->height != r.pixels.height || r.lesion_mask->width != r.pixels.width))
      throw DataError("mask of '" + r.id + "' does not match its image size");
  }
}

bool DatasetManifest::fully_labeled() const {
  return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.label.has_value(); });
}

std::vector<int> DatasetManifest::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw DataError("record '" + r.id + "' has no label");
    out.push_back(*r.label);
  }
  return out;
}

std::size_t DatasetManifest::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].id == id) return i;
  throw DataError("unknown image id '" + id + "'");
}

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& root,
                              const std::filesystem::path& labels_file) {
  std::ifstream in(labels_file);
  if (!in) throw DataError("cannot open labels file " + labels_file.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("labels file is empty: " + labels_file.string());
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_id = column("id"), c_part = column("participant_id"), c_label = column("label"),
            c_mask = column("mask");
  if (c_id < 0 || c_part < 0 || c_label < 0)
    throw DataError("labels file needs columns id,participant_id,label[,mask]");

  DatasetManifest m;
  m.name = root.filename().string();
  std::set<std::string> seen;
  std::vector<std::string> missing;
  int max_label = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    cells.resize(std::max<std::size_t>(cells.size(), header.size()));
    ImageRecord r;
    r.id = cells[c_id];
    r.participant_id = cells[c_part];
    if (!seen.insert(r.id).second) throw DataError("duplicate image id '" + r.id + "'");
    if (!cells[c_label].empty()) {
      try {
        r.label = std::stoi(cells[c_label]);
      } catch (const std::exception&) {
        throw DataError("bad label '" + cells[c_label] + "' for '" + r.id + "'");
      }
      max_label = std::max(max_label, *r.label);
    }
    r.image_path = root / (r.id + ".png");
    if (c_mask >= 0 && !cells[c_mask].empty()) r.mask_path = root / cells[c_mask];
    if (!std::filesystem::exists(r.image_path)) missing.push_back(r.id);
    m.records.push_back(std::move(r));
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw DataError("missing image file for id(s): " + ids);
  }
  m.n_classes = max_label + 1;
  m.validate();
  return m;
}

void decode_images(DatasetManifest& manifest) {
  for (auto& r : manifest.records) {
    if (r.decoded()) continue;
    r.pixels = read_png(r.image_path);
    if (r.mask_path) {
      if (!std::filesystem::exists(*r.mask_path))
        throw DataError("missing mask file for id " + r.id + ": " + r.mask_path->string());
      r.lesion_mask = read_png_mask(*r.mask_path);
    }
  }
  manifest.validate();
}

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ofstream csv(root / "labels.csv", std::ios::binary);
  csv << "id,participant_id,label,mask\n";
  for (const auto& r : manifest.records) {
    if (!r.decoded()) throw DataError("record '" + r.id + "' has no pixels to write");
    write_png(root / (r.id + ".png"), r.pixels);
    std::string mask_name;
    if (r.lesion_mask) {
      mask_name = r.id + "_mask.png";
      write_png_mask(root / mask_name, *r.lesion_mask);
    }
    csv << r.id << ',' << r.participant_id << ',' << (r.label ? std::to_string(*r.label) : "")
        << ',' << mask_name << '\n';
  }
  if (!csv) throw DataError("failed writing labels.csv under " + root.string());
}

// ------------------------------------------------------------ synthetic

std::vector<int> default_lesions_per_grade(int n_classes) {
  std::vector<int> out(static_cast<std::size_t>(std::max(n_classes, 0)));
  for (int g = 0; g < n_classes; ++g) out[g] = 8 * g;
  return out;
}

namespace {

float q8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::round(c * 255.0) / 255.0);
}

void paint_image(Image& img, Mask& mask, int n_lesions, const SyntheticConfig& cfg,
                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.01);
  const double s = cfg.image_size;
  const double cy = s / 2.0 - 0.5 + (u(rng) - 0.5) * 0.06 * s;
  const double cx = s / 2.0 - 0.5 + (u(rng) - 0.5) * 0.06 * s;
  const double radius = s * (0.42 + 0.04 * u(rng));
  const double base[3] = {0.70 + 0.12 * u(rng), 0.30 + 0.10 * u(rng), 0.12 + 0.08 * u(rng)};
  const double od_angle = 2.0 * std::numbers::pi * u(rng);
  const double od_y = cy + 0.55 * radius * std::sin(od_angle);
  const double od_x = cx + 0.55 * radius * std::cos(od_angle);
  const double od_r = 0.13 * radius;

  std::vector<double> canvas(static_cast<std::size_t>(cfg.image_size) * cfg.image_size * 3, 0.0);
  for (int r = 0; r < cfg.image_size; ++r)
    for (int c = 0; c < cfg.image_size; ++c) {
      const double d2 = ((r - cy) * (r - cy) + (c - cx) * (c - cx)) / (radius * radius);
      if (d2 > 1.0) continue;
      const double shade = 1.0 - 0.35 * d2;
      const double od = std::exp(-((r - od_y) * (r - od_y) + (c - od_x) * (c - od_x)) /
                                 (2.0 * od_r * od_r));
      const double od_color[3] = {0.97, 0.88, 0.62};
      for (int ch = 0; ch < 3; ++ch) {
        const double v = base[ch] * shade * (1.0 - od) + od_color[ch] * od;
        canvas[(static_cast<std::size_t>(r) * cfg.image_size + c) * 3 + ch] = v + noise(rng);
      }
    }

  const double exudate[3] = {0.96, 0.92, 0.42};
  const double hemorrhage[3] = {0.32, 0.04, 0.04};
  for (int l = 0; l < n_lesions; ++l) {
    const double rr = cfg.lesion_radius_min + (cfg.lesion_radius_max - cfg.lesion_radius_min) * u(rng);
    const double ang = 2.0 * std::numbers::pi * u(rng);
    const double dist = (radius - rr - 1.0) * std::sqrt(u(rng));
    const double ly = cy + dist * std::sin(ang), lx = cx + dist * std::cos(ang);
    const double* color = u(rng) < 0.5 ? exudate : hemorrhage;
    const int r0 = std::max(0, static_cast<int>(std::floor(ly - rr)));
    const int r1 = std::min(cfg.image_size - 1, static_cast<int>(std::ceil(ly + rr)));
    const int c0 = std::max(0, static_cast<int>(std::floor(lx - rr)));
    const int c1 = std::min(cfg.image_size - 1, static_cast<int>(std::ceil(lx + rr)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        if ((r - ly) * (r - ly) + (c - lx) * (c - lx) > rr * rr) continue;
        mask.at(r, c) = 1;
        for (int ch = 0; ch < 3; ++ch)
          canvas[(static_cast<std::size_t>(r) * cfg.image_size + c) * 3 + ch] = color[ch];
      }
  }
  for (std::size_t i = 0; i < canvas.size(); ++i) img.pixels[i] = q8(canvas[i]);
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& config) {
  if (config.n_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (config.n_images < 1) throw ConfigError("synthetic dataset needs at least one image");
  if (config.image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
  if (config.images_per_participant < 1) throw ConfigError("images_per_participant must be >= 1");
  auto lesions = config.lesions_per_grade.empty() ? default_lesions_per_grade(config.n_classes)
                                                  : config.lesions_per_grade;
  if (static_cast<int>(lesions.size()) != config.n_classes)
    throw ConfigError("lesions_per_grade needs one entry per class");
  for (std::size_t g = 0; g < lesions.size(); ++g) {
    if (lesions[g] < 0) throw ConfigError("lesion counts must be nonnegative");
    if (g > 0 && lesions[g] <= lesions[g - 1])
      throw ConfigError("lesions_per_grade must be strictly increasing with grade");
  }

  DatasetManifest m;
  m.name = "synthetic";
  m.n_classes = config.n_classes;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> grade_dist(0, config.n_classes - 1);
  int grade = 0;
  for (int i = 0; i < config.n_images; ++i) {
    const int participant = i / config.images_per_participant;
    if (i % config.images_per_participant == 0) grade = grade_dist(rng);
    char id[32], pid[32];
    std::snprintf(id, sizeof id, "img_%05d", i);
    std::snprintf(pid, sizeof pid, "p_%05d", participant);
    ImageRecord r;
    r.id = id;
    r.participant_id = pid;
    r.label = grade;
    r.pixels = Image(config.image_size, config.image_size, 3);
    Mask mask(config.image_size, config.image_size);
    paint_image(r.pixels, mask, lesions[grade], config, rng);
    r.lesion_mask = std::move(mask);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

// --------------------------------------------------------------- splits

std::vector<std::size_t> SplitSpec::records_in_fold(const DatasetManifest& m, int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (fold_of.at(m.records[i].participant_id) == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> SplitSpec::records_outside_fold(const DatasetManifest& m, int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (fold_of.at(m.records[i].participant_id) != fold) out.push_back(i);
  return out;
}

std::map<std::string, int> group_strata(std::span<const std::string> groups,
                                        std::span<const std::optional<int>> labels) {
  if (groups.size() != labels.size()) throw ShapeError("group and label counts differ");
  std::map<std::string, std::map<int, int>> counts;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto& c = counts[groups[i]];
    if (labels[i]) ++c[*labels[i]];
  }
  std::map<std::string, int> out;
  for (const auto& [pid, c] : counts) {
    int best = -1, best_count = 0;
    for (const auto& [label, n] : c)  // ascending labels: ties keep the smallest
      if (n > best_count) best = label, best_count = n;
    out[pid] = best;
  }
  return out;
}

std::map<std::string, int> participant_strata(const DatasetManifest& manifest) {
  std::vector<std::string> groups;
  std::vector<std::optional<int>> labels;
  for (const auto& r : manifest.records) {
    groups.push_back(r.participant_id);
    labels.push_back(r.label);
  }
  return group_strata(groups, labels);
}

namespace {

// Round-robin dealing can pile the remainders of several strata onto the same
// folds. Swapping two participants of different strata between two folds keeps
// every fold size; apply the best such swap until neither the worst
// per-fold deviation from the global stratum shares nor the summed squared
// deviation improves.
void rebalance_strata(SplitSpec& split, const std::map<std::string, int>& strata,
                      const std::map<int, std::vector<std::string>>& groups) {
  const int folds = split.folds;
  std::vector<int> ids;
  for (const auto& [s, members] : groups) ids.push_back(s);
  const int k = static_cast<int>(ids.size());
  if (k < 2) return;
  auto index_of = [&](int stratum) {
    return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), stratum) - ids.begin());
  };
  std::vector<std::vector<int>> count(folds, std::vector<int>(k, 0));
  std::vector<int> size(folds, 0);
  std::vector<double> share(k);
  for (const auto& [pid, f] : split.fold_of) {
    ++count[f][index_of(strata.at(pid))];
    ++size[f];
  }
  for (int c = 0; c < k; ++c)
    share[c] = static_cast<double>(groups.at(ids[c]).size()) / static_cast<double>(strata.size());

  auto score = [&] {
    double worst = 0, sq = 0;
    for (int f = 0; f < folds; ++f)
      for (int c = 0; c < k; ++c) {
        const double d = std::abs(static_cast<double>(count[f][c]) / size[f] - share[c]);
        worst = std::max(worst, d);
        sq += d * d;
      }
    return std::pair{worst, sq};
  };

  auto current = score();
  for (;;) {
    std::pair best = current;
    int bf = -1, bg = -1, ba = -1, bb = -1;
    for (int f = 0; f < folds; ++f)
      for (int g = f + 1; g < folds; ++g)
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b) {
            if (a == b || count[f][a] == 0 || count[g][b] == 0) continue;
            --count[f][a], ++count[f][b], --count[g][b], ++count[g][a];
            const auto s = score();
            ++count[f][a], --count[f][b], ++count[g][b], --count[g][a];
            if (s.first < best.first - 1e-12 ||
                (s.first <= best.first + 1e-12 && s.second < best.second - 1e-12)) {
              best = s;
              bf = f, bg = g, ba = a, bb = b;
            }
          }
    if (bf < 0) break;
    // Move the last-dealt member of each side.
    auto last_in = [&](int stratum, int fold) -> std::string {
      const auto& members = groups.at(ids[stratum]);
      for (auto it = members.rbegin(); it != members.rend(); ++it)
        if (split.fold_of.at(*it) == fold) return *it;
      return {};
    };
    const std::string p = last_in(ba, bf), q = last_in(bb, bg);
    split.fold_of[p] = bg;
    split.fold_of[q] = bf;
    --count[bf][ba], ++count[bf][bb], --count[bg][bb], ++count[bg][ba];
    current = best;
  }
}

}  // namespace

SplitSpec stratified_group_split(const std::map<std::string, int>& strata, int folds,
                                 std::uint64_t seed) {
  if (folds < 2) throw ConfigError("need at least 2 folds");
  if (static_cast<int>(strata.size()) < folds)
    throw DataError("only " + std::to_string(strata.size()) + " participants for " +
                    std::to_string(folds) + " folds");
  std::map<int, std::vector<std::string>> groups;
  for (const auto& [pid, s] : strata) groups[s].push_back(pid);

  SplitSpec split;
  split.folds = folds;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  std::size_t position = 0;
  for (auto& [stratum, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (const auto& pid : members) split.fold_of[pid] = static_cast<int>(position++ % folds);
  }
  rebalance_strata(split, strata, groups);
  return split;
}

SplitSpec stratified_participant_split(const DatasetManifest& manifest, int folds,
                                       std::uint64_t seed) {
  return stratified_group_split(participant_strata(manifest), folds, seed);
}

// --------------------------------------------------------- augmentation

void AugmentConfig::validate() const {
  if (output_size < 1) throw ConfigError("augmentation output_size must be positive");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw ConfigError("crop scale range must lie in (0, 1]");
  if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max))
    throw ConfigError("crop ratio range must be positive and ordered");
  for (double p : {flip_probability, jitter_probability, grayscale_probability})
    if (p < 0.0 || p > 1.0) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5)
    throw ConfigError("color jitter strengths must be nonnegative (hue <= 0.5)");
}

AugmentConfig AugmentConfig::identity(int output_size) {
  AugmentConfig c;
  c.output_size = output_size;
  c.random_crop = false;
  c.flip_probability = 0.0;
  c.jitter_probability = 0.0;
  c.grayscale_probability = 0.0;
  return c;
}

namespace {

// Samples the crop box [y0, y0 + h) x [x0, x0 + w) in continuous pixel units.
Image crop_resize(const Image& img, double y0, double x0, double h, double w, int out) {
  Image res(out, out, img.channels);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < out; ++c) {
      const double sy = std::clamp(y0 + (r + 0.5) * h / out - 0.5, 0.0, img.height - 1.0);
      const double sx = std::clamp(x0 + (c + 0.5) * w / out - 0.5, 0.0, img.width - 1.0);
      const int y_lo = static_cast<int>(std::floor(sy)), x_lo = static_cast<int>(std::floor(sx));
      const int y_hi = std::min(y_lo + 1, img.height - 1), x_hi = std::min(x_lo + 1, img.width - 1);
      const double fy = sy - y_lo, fx = sx - x_lo;
      for (int ch = 0; ch < img.channels; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * img.at(y_lo, x_lo, ch) + fx * img.at(y_lo, x_hi, ch)) +
                         fy * ((1 - fx) * img.at(y_hi, x_lo, ch) + fx * img.at(y_hi, x_hi, ch));
        res.at(r, c, ch) = static_cast<float>(v);
      }
    }
  return res;
}

void clip01(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

float luminance(const Image& img, int r, int c) {
  return 0.299f * img.at(r, c, 0) + 0.587f * img.at(r, c, 1) + 0.114f * img.at(r, c, 2);
}

void rotate_hue(Image& img, double shift) {
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const double R = img.at(r, c, 0), G = img.at(r, c, 1), B = img.at(r, c, 2);
      const double mx = std::max({R, G, B}), mn = std::min({R, G, B}), delta = mx - mn;
      if (delta <= 0.0) continue;
      double h;
      if (mx == R)
        h = std::fmod((G - B) / delta, 6.0);
      else if (mx == G)
        h = (B - R) / delta + 2.0;
      else
        h = (R - G) / delta + 4.0;
      h = h / 6.0 + shift;
      h -= std::floor(h);
      const double s = delta / mx, v = mx;
      const double hh = h * 6.0;
      const int sector = static_cast<int>(std::floor(hh)) % 6;
      const double f = hh - std::floor(hh);
      const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
      double out[3];
      switch (sector) {
        case 0: out[0] = v, out[1] = t, out[2] = p; break;
        case 1: out[0] = q, out[1] = v, out[2] = p; break;
        case 2: out[0] = p, out[1] = v, out[2] = t; break;
        case 3: out[0] = p, out[1] = q, out[2] = v; break;
        case 4: out[0] = t, out[1] = p, out[2] = v; break;
        default: out[0] = v, out[1] = p, out[2] = q; break;
      }
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = static_cast<float>(out[ch]);
    }
}

void color_jitter(Image& img, const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto factor = [&](double strength) { return 1.0 + strength * (2.0 * u(rng) - 1.0); };
  const double b = factor(cfg.brightness);
  const double k = factor(cfg.contrast);
  const double s = factor(cfg.saturation);
  const double h = cfg.hue * (2.0 * u(rng) - 1.0);

  for (auto& v : img.pixels) v = static_cast<float>(v * b);
  clip01(img);

  double mean = 0.0;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      mean += img.channels == 3 ? luminance(img, r, c) : img.at(r, c, 0);
  mean /= static_cast<double>(img.height) * img.width;
  for (auto& v : img.pixels) v = static_cast<float>(k * v + (1.0 - k) * mean);
  clip01(img);

  if (img.channels == 3) {
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        const float gray = luminance(img, r, c);
        for (int ch = 0; ch < 3; ++ch)
          img.at(r, c, ch) = static_cast<float>(s * img.at(r, c, ch) + (1.0 - s) * gray);
      }
    clip01(img);
    if (h != 0.0) rotate_hue(img, h);
    clip01(img);
  }
}

}  // namespace

Image resize_bilinear(const Image& image, int out_h, int out_w) {
  if (out_h == image.height && out_w == image.width) return image;
  if (out_h != out_w) throw ConfigError("resize_bilinear supports square outputs only");
  return crop_resize(image, 0.0, 0.0, image.height, image.width, out_h);
}

Image augment_view(const Image& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double H = image.height, W = image.width;

  Image view;
  if (cfg.random_crop) {
    double y0 = 0, x0 = 0, h = H, w = W;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
      const double area = H * W * (cfg.crop_scale_min + (cfg.crop_scale_max - cfg.crop_scale_min) * u(rng));
      const double log_r = std::log(cfg.crop_ratio_min) +
                           (std::log(cfg.crop_ratio_max) - std::log(cfg.crop_ratio_min)) * u(rng);
      const double ratio = std::exp(log_r);
      const double cw = std::sqrt(area * ratio), ch = std::sqrt(area / ratio);
      if (cw <= W && ch <= H) {
        w = cw, h = ch;
        y0 = (H - h) * u(rng);
        x0 = (W - w) * u(rng);
        found = true;
      }
    }
    view = crop_resize(image, y0, x0, h, w, cfg.output_size);
  } else {
    view = resize_bilinear(image, cfg.output_size, cfg.output_size);
  }

  if (u(rng) < cfg.flip_probability) {
    for (int r = 0; r < view.height; ++r)
      for (int c = 0; c < view.width / 2; ++c)
        for (int ch = 0; ch < view.channels; ++ch)
          std::swap(view.at(r, c, ch), view.at(r, view.width - 1 - c, ch));
  }
  if (u(rng) < cfg.jitter_probability) color_jitter(view, cfg, rng);
  if (view.channels == 3 && u(rng) < cfg.grayscale_probability) {
    for (int r = 0; r < view.height; ++r)
      for (int c = 0; c < view.width; ++c) {
        const float g = luminance(view, r, c);
        for (int ch = 0; ch < 3; ++ch) view.at(r, c, ch) = g;
      }
  }
  clip01(view);
  return view;
}

ViewPair augment_pair(const ImageRecord& record, const AugmentConfig& config,
                      std::mt19937_64& rng) {
  if (!record.decoded()) throw DataError("record '" + record.id + "' is not decoded");
  ViewPair pair;
  pair.source_id = record.id;
  pair.view_a = augment_view(record.pixels, config, rng);
  pair.view_b = augment_view(record.pixels, config, rng);
  return pair;
}

Tensor<float> to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw ShapeError("to_batch: empty image list");
  const Image& first = *images[0];
  const std::size_t c = first.channels, h = first.height, w = first.width;
  Tensor<float> out({images.size(), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.channels != first.channels || img.height != first.height || img.width != first.width)
      throw ShapeError("to_batch: images differ in shape");
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
          out.at(n, ch, r, col) = img.pixels[(r * w + col) * c + ch];
  }
  return out;
}

Tensor<float> to_batch(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return to_batch(std::span<const Image* const>(ptrs));
}

}  // namespace bagclr
