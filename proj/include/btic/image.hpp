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

#include <btic/common.hpp>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace btic {

// 8-bit RGB image, row-major, as decoded from disk.
inline cv::Mat load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty() || bgr.rows < 1 || bgr.cols < 1) throw InputError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

inline bool is_decodable(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return false;
  return !cv::imread(path.string(), cv::IMREAD_COLOR).empty();
}

inline cv::Mat resize_bilinear(const cv::Mat& image, int height, int width) {
  cv::Mat out;
  cv::resize(image, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return out;
}

// grid x grid patches of the resized image, row-major (patch j = row j / grid, column j % grid).
struct PatchGrid {
  int grid = 0;
  int patch_size = 0;
  std::vector<cv::Mat> patches;  // each patch_size x patch_size x 3, CV_8UC3

  std::size_t size() const { return patches.size(); }
};

inline PatchGrid patchify(const cv::Mat& image, int image_size, int grid) {
  if (image.empty()) throw InputError("patchify: empty image");
  if (grid <= 0 || image_size % grid != 0)
    throw InputError("patchify: image size " + std::to_string(image_size) + " is not a multiple of grid " +
                     std::to_string(grid));
  cv::Mat resized = resize_bilinear(image, image_size, image_size);
  PatchGrid g;
  g.grid = grid;
  g.patch_size = image_size / grid;
  g.patches.reserve(static_cast<std::size_t>(grid * grid));
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c)
      g.patches.push_back(resized(cv::Rect(c * g.patch_size, r * g.patch_size, g.patch_size, g.patch_size)).clone());
  return g;
}

inline cv::Mat reassemble(const PatchGrid& g) {
  const int side = g.grid * g.patch_size;
  cv::Mat out(side, side, g.patches.empty() ? CV_8UC3 : g.patches.front().type());
  for (int j = 0; j < static_cast<int>(g.patches.size()); ++j)
    g.patches[static_cast<std::size_t>(j)].copyTo(
        out(cv::Rect((j % g.grid) * g.patch_size, (j / g.grid) * g.patch_size, g.patch_size, g.patch_size)));
  return out;
}

}  // namespace btic
