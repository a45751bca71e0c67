// Copyright (c) 2026, The BTIC Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Attention and embedding exports: per-position attention mass, occlusion
// attributions, heatmap overlays, scatter plots and .npy dumps.

#include <btic/harness.hpp>
#include <btic/image.hpp>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace btic {

// NumPy .npy (format 1.0), little-endian float64, C order.
inline void write_npy(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
                      const std::vector<double>& data) {
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) dims += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) dims += ",";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out << header;
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct AttentionSummary {
  std::vector<Matrix> heads;  // R x (l x l)
  Matrix mean;                // head average
  RowVector received;         // column sums of the head average: mass received per position
  RowVector text;             // first n entries
  Matrix patch_grid;          // grid x grid, row-major patch order
};

inline AttentionSummary summarize_attention(const std::vector<Matrix>& heads, int text_len, int grid) {
  if (heads.empty()) throw std::invalid_argument("no attention heads");
  AttentionSummary s;
  s.heads = heads;
  s.mean = Matrix::Zero(heads.front().rows(), heads.front().cols());
  for (const auto& h : heads) s.mean += h;
  s.mean /= static_cast<double>(heads.size());
  s.received = s.mean.colwise().sum();
  s.text = s.received.head(text_len);
  const Eigen::Index m = s.received.size() - text_len;
  if (m > 0) {
    s.patch_grid.resize(grid, grid);
    for (Eigen::Index j = 0; j < m; ++j) s.patch_grid(j / grid, j % grid) = s.received(text_len + j);
  }
  return s;
}

// Bilinear upscale of a grid of weights to size x size.
inline Matrix upscale_grid(const Matrix& grid, int size) {
  cv::Mat src(static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), CV_64F);
  for (int r = 0; r < src.rows; ++r)
    for (int c = 0; c < src.cols; ++c) src.at<double>(r, c) = grid(r, c);
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  Matrix out(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) out(r, c) = dst.at<double>(r, c);
  return out;
}

// Logit change when each position's row of e is zeroed: positive values push
// towards Unreliable, negative towards Reliable.
inline RowVector occlusion_contributions(const Model& model, const ag::Var& sequence) {
  const double base = model.forward_sequence(sequence, false).prediction.logit.scalar();
  RowVector out(sequence.rows());
  for (Eigen::Index j = 0; j < sequence.rows(); ++j) {
    Matrix e = sequence.value();
    e.row(j).setZero();
    out(j) = base - model.forward_sequence(ag::constant(std::move(e)), false).prediction.logit.scalar();
  }
  return out;
}

inline cv::Mat to_bgr8(const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

// Jet-coloured attention overlay blended 50/50 with the image.
inline cv::Mat attention_overlay(const cv::Mat& rgb_image, const Matrix& weights) {
  const int size = static_cast<int>(weights.rows());
  cv::Mat base = to_bgr8(resize_bilinear(rgb_image, size, size));
  const double lo = weights.minCoeff(), hi = weights.maxCoeff();
  cv::Mat gray(size, size, CV_8U);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      gray.at<std::uint8_t>(r, c) =
          static_cast<std::uint8_t>(hi > lo ? std::lround(255.0 * (weights(r, c) - lo) / (hi - lo)) : 0);
  cv::Mat colour, out;
  cv::applyColorMap(gray, colour, cv::COLORMAP_JET);
  cv::addWeighted(base, 0.5, colour, 0.5, 0.0, out);
  return out;
}

// Blue where a patch pushes towards Unreliable, red towards Reliable.
inline cv::Mat class_overlay(const cv::Mat& rgb_image, const Matrix& signed_weights) {
  const int size = static_cast<int>(signed_weights.rows());
  cv::Mat base = to_bgr8(resize_bilinear(rgb_image, size, size));
  const double scale = std::max(signed_weights.cwiseAbs().maxCoeff(), 1e-12);
  cv::Mat tint(size, size, CV_8UC3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double v = signed_weights(r, c) / scale;
      const auto mag = static_cast<std::uint8_t>(std::lround(255.0 * std::abs(v)));
      tint.at<cv::Vec3b>(r, c) = v >= 0 ? cv::Vec3b(mag, 0, 0) : cv::Vec3b(0, 0, mag);
    }
  cv::Mat out;
  cv::addWeighted(base, 0.5, tint, 0.5, 0.0, out);
  return out;
}

// Scatter plot of 2-D points coloured by label (Reliable red, Unreliable blue).
inline cv::Mat scatter_plot(const Matrix& points, const std::vector<Label>& labels, const std::string& title,
                            int size = 800) {
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const int margin = 40;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (points.rows() > 0) {
    x0 = points.col(0).minCoeff();
    x1 = points.col(0).maxCoeff();
    y0 = points.col(1).minCoeff();
    y1 = points.col(1).maxCoeff();
  }
  const double sx = x1 > x0 ? (size - 2 * margin) / (x1 - x0) : 0.0;
  const double sy = y1 > y0 ? (size - 2 * margin) / (y1 - y0) : 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int px = margin + static_cast<int>(std::lround((points(i, 0) - x0) * sx));
    const int py = size - margin - static_cast<int>(std::lround((points(i, 1) - y0) * sy));
    const cv::Scalar colour = labels[static_cast<std::size_t>(i)] == Label::Reliable ? cv::Scalar(40, 40, 220)
                                                                                     : cv::Scalar(220, 90, 30);
    cv::circle(img, {px, py}, 4, colour, cv::FILLED, cv::LINE_AA);
  }
  cv::putText(img, title, {margin, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.7, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::circle(img, {size - 170, 22}, 5, cv::Scalar(40, 40, 220), cv::FILLED);
  cv::putText(img, "Reliable", {size - 160, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::circle(img, {size - 80, 22}, 5, cv::Scalar(220, 90, 30), cv::FILLED);
  cv::putText(img, "Unreliable", {size - 70, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);
  return img;
}

inline void write_png(const std::filesystem::path& path, const cv::Mat& bgr) {
  if (!cv::imwrite(path.string(), bgr)) throw RuntimeError("cannot write " + path.string());
}

// "%.17g" keeps every double exactly.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace btic
