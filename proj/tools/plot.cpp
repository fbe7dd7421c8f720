#include "plot.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bagclr/errors.hpp"

namespace bagclr::plot {

namespace {

// Tableau-10, stored BGR.
const cv::Scalar kPalette[] = {
    {180, 119, 31}, {14, 127, 255}, {44, 160, 44},   {40, 39, 214},  {189, 103, 148},
    {75, 86, 140},  {194, 119, 227}, {127, 127, 127}, {34, 189, 188}, {207, 190, 23},
};
const cv::Scalar kUnlabeled{190, 190, 190};

cv::Scalar color_for(int label) {
  return label < 0 ? kUnlabeled : kPalette[label % std::size(kPalette)];
}

}  // namespace

std::vector<EmbeddingPoint> read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read embedding file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,x,y,label", 0) != 0)
    throw DataError(path.string() + ": expected header id,x,y,label");
  std::vector<EmbeddingPoint> out;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::stringstream s(line);
    std::string id, x, y, label;
    std::getline(s, id, ',');
    std::getline(s, x, ',');
    std::getline(s, y, ',');
    std::getline(s, label, ',');
    EmbeddingPoint p;
    p.id = id;
    try {
      p.x = std::stod(x);
      p.y = std::stod(y);
      p.label = label.empty() ? -1 : std::stoi(label);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": malformed row");
    }
    out.push_back(p);
  }
  if (out.empty()) throw DataError(path.string() + " holds no points");
  return out;
}

Scatter render_scatter(const std::vector<EmbeddingPoint>& points, int size) {
  Scatter out;
  out.image = cv::Mat(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  // Equal aspect so distances read correctly.
  const double span = std::max({x1 - x0, y1 - y0, 1e-12});
  const double margin = 0.06 * size, usable = size - 2 * margin;
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  auto to_pixel = [&](const EmbeddingPoint& p) {
    return cv::Point(static_cast<int>(std::lround(size / 2.0 + (p.x - cx) / span * usable)),
                     static_cast<int>(std::lround(size / 2.0 - (p.y - cy) / span * usable)));
  };
  std::map<int, int> counts;
  for (const auto& p : points) ++counts[p.label];
  // Unlabeled first so classes draw on top.
  for (const auto& p : points)
    if (p.label < 0) cv::circle(out.image, to_pixel(p), 3, kUnlabeled, cv::FILLED, cv::LINE_8);
  for (const auto& p : points)
    if (p.label >= 0) cv::circle(out.image, to_pixel(p), 3, color_for(p.label), cv::FILLED, cv::LINE_8);

  int row = 0;
  const int line_h = 26, x_box = size - 170;
  for (const auto& [label, n] : counts) {
    const std::string text = label < 0 ? "unlabeled" : "grade " + std::to_string(label);
    const int y = 24 + row * line_h;
    cv::rectangle(out.image, cv::Rect(x_box, y - 12, 14, 14), color_for(label), cv::FILLED);
    cv::putText(out.image, text, cv::Point(x_box + 22, y), cv::FONT_HERSHEY_SIMPLEX, 0.55,
                cv::Scalar(40, 40, 40), 1, cv::LINE_8);
    out.legend.push_back(text);
    ++row;
  }
  return out;
}

Overlay render_evidence_overlay(const Image& image, const std::vector<float>& evidence, int rows,
                                int cols, const std::optional<Mask>& mask, int scale) {
  if (static_cast<std::size_t>(rows) * cols != evidence.size())
    throw ShapeError("evidence map size does not match rows x cols");
  const int h = image.height * scale, w = image.width * scale;
  cv::Mat base(image.height, image.width, CV_8UC3);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        base.at<cv::Vec3b>(r, c)[2 - ch] =
            cv::saturate_cast<uchar>(std::lround(255.0f * image.at(r, c, ch)));
  cv::resize(base, base, cv::Size(w, h), 0, 0, cv::INTER_NEAREST);

  cv::Mat ev(rows, cols, CV_32F, const_cast<float*>(evidence.data()));
  double lo, hi;
  cv::minMaxLoc(ev, &lo, &hi);
  cv::Mat norm;
  ev.convertTo(norm, CV_8U, hi > lo ? 255.0 / (hi - lo) : 0.0, hi > lo ? -lo * 255.0 / (hi - lo) : 0.0);
  cv::resize(norm, norm, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
  cv::Mat heat;
  cv::applyColorMap(norm, heat, cv::COLORMAP_JET);

  Overlay out;
  cv::addWeighted(base, 0.55, heat, 0.45, 0.0, out.image);
  if (mask && mask->area() > 0) {
    cv::Mat m(mask->height, mask->width, CV_8U);
    for (int r = 0; r < mask->height; ++r)
      for (int c = 0; c < mask->width; ++c) m.at<uchar>(r, c) = mask->at(r, c) ? 255 : 0;
    cv::resize(m, m, cv::Size(w, h), 0, 0, cv::INTER_NEAREST);
    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(m, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
    cv::drawContours(out.image, contours, -1, cv::Scalar(255, 255, 255), 2, cv::LINE_8);
    out.contours = static_cast<int>(contours.size());
  }
  return out;
}

void write_png_file(const std::filesystem::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), image, params)) throw DataError("cannot write " + path.string());
}

}  // namespace bagclr::plot
