#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "bagclr/data.hpp"

namespace bagclr::plot {

struct EmbeddingPoint {
  std::string id;
  double x = 0.0, y = 0.0;
  int label = -1;  // -1: unlabeled
};

/// Reads `id,x,y,label` (label may be empty).
std::vector<EmbeddingPoint> read_embedding_csv(const std::filesystem::path& path);

struct Scatter {
  cv::Mat image;                     // BGR, fixed size
  std::vector<std::string> legend;  // one entry per drawn class, in order
};

/// Axis-free scatter colored by label, with a legend in the top-right corner.
Scatter render_scatter(const std::vector<EmbeddingPoint>& points, int size = 800);

struct Overlay {
  cv::Mat image;
  int contours = 0;  // lesion outlines drawn
};

/// Evidence map (rows x cols, row-major) as a translucent heat layer over the
/// image, scaled up by `scale`, with lesion-mask outlines when a nonempty
/// mask is given.
Overlay render_evidence_overlay(const Image& image, const std::vector<float>& evidence, int rows,
                                int cols, const std::optional<Mask>& mask, int scale = 8);

/// PNG with fixed encoder settings.
void write_png_file(const std::filesystem::path& path, const cv::Mat& image);

}  // namespace bagclr::plot
