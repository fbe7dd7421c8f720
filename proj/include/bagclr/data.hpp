#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bagclr/tensor.hpp"

namespace bagclr {

/// H x W x C image, row-major, interleaved channels, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const { return pixels.empty(); }
  float& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  float at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary lesion annotation, one byte per pixel (0 or 1).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int r, int c) { return bits[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c]; }
  std::size_t area() const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

struct ImageRecord {
  std::string id;
  std::string participant_id;
  std::optional<int> label;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;
  // Empty until decoded (load_manifest is lazy; the generator fills these).
  Image pixels;
  std::optional<Mask> lesion_mask;

  bool decoded() const { return !pixels.empty(); }
};

struct DatasetManifest {
  std::string name;
  int n_classes = 0;
  std::vector<ImageRecord> records;

  // Unique ids, labels in [0, n_classes), masks the size of their images.
  void validate() const;
  bool fully_labeled() const;
  std::vector<int> labels() const;  // throws if any record is unlabeled
  std::size_t index_of(const std::string& id) const;
};

// ------------------------------------------------------------------ I/O

Image read_png(const std::filesystem::path& path);
Mask read_png_mask(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

/// Reads `id,participant_id,label,mask`; images resolve to root/<id>.png and
/// masks to root/<mask>. Pixels stay undecoded. Throws DataError naming the
/// ids whose image files are missing, or the first duplicated id.
DatasetManifest load_manifest(const std::filesystem::path& root,
                              const std::filesystem::path& labels_file);

/// Decodes pixels and masks for every record that is not yet decoded.
void decode_images(DatasetManifest& manifest);

/// Writes <id>.png, <id>_mask.png and labels.csv under root.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& root);

// ------------------------------------------------------------ synthetic

struct SyntheticConfig {
  int n_images = 200;
  int n_classes = 2;
  int image_size = 64;
  std::vector<int> lesions_per_grade;  // empty: default_lesions_per_grade()
  std::uint64_t seed = 0;
  int images_per_participant = 2;
  double lesion_radius_min = 1.2;
  double lesion_radius_max = 2.2;
};

std::vector<int> default_lesions_per_grade(int n_classes);

/// Disc-shaped fundus-like backgrounds with grade-dependent numbers of small
/// bright or dark blobs. Masks mark blob pixels exactly. Pixel values are
/// quantized to 8 bits so that write/read round-trips leave them unchanged.
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& config);

// --------------------------------------------------------------- splits

struct SplitSpec {
  std::map<std::string, int> fold_of;  // participant id -> fold
  int folds = 0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> records_in_fold(const DatasetManifest& m, int fold) const;
  std::vector<std::size_t> records_outside_fold(const DatasetManifest& m, int fold) const;
};

/// Participant label used for stratification: majority label over the
/// participant's labeled images, ties to the smallest label; -1 if unlabeled.
std::map<std::string, int> participant_strata(const DatasetManifest& manifest);

/// Majority label per group (ties to the smallest; -1 when unlabeled).
std::map<std::string, int> group_strata(std::span<const std::string> groups,
                                        std::span<const std::optional<int>> labels);

/// Deals groups into folds, stratified by the given group labels.
SplitSpec stratified_group_split(const std::map<std::string, int>& strata, int folds,
                                 std::uint64_t seed);

/// Participant-disjoint folds. Participants are shuffled within each stratum
/// and dealt round-robin, with the dealing position carried across strata so
/// fold sizes differ by at most one. Size-preserving swaps then pull each
/// fold's stratum shares towards the global ones.
SplitSpec stratified_participant_split(const DatasetManifest& manifest, int folds,
                                       std::uint64_t seed);

// --------------------------------------------------------- augmentation

struct AugmentConfig {
  int output_size = 64;
  bool random_crop = true;
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  double jitter_probability = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_probability = 0.2;

  void validate() const;
  // Every augmentation disabled; views equal the resized original.
  static AugmentConfig identity(int output_size);
};

struct ViewPair {
  Image view_a;
  Image view_b;
  std::string source_id;
};

/// Bilinear resize (pixel-center aligned).
Image resize_bilinear(const Image& image, int out_h, int out_w);
Image augment_view(const Image& image, const AugmentConfig& config, std::mt19937_64& rng);
ViewPair augment_pair(const ImageRecord& record, const AugmentConfig& config,
                      std::mt19937_64& rng);

/// Packs HWC images into an N x C x H x W tensor.
Tensor<float> to_batch(std::span<const Image* const> images);
Tensor<float> to_batch(const std::vector<Image>& images);

}  // namespace bagclr
