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

#include <btic/corpus.hpp>
#include <btic/image.hpp>

#include <curl/curl.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>

namespace btic {

enum class FetchStatus { Cached, Downloaded, Unavailable };

inline std::string_view to_string(FetchStatus s) {
  switch (s) {
    case FetchStatus::Cached: return "cached";
    case FetchStatus::Downloaded: return "downloaded";
    case FetchStatus::Unavailable: return "unavailable";
  }
  return "unavailable";
}

struct FetchEntry {
  std::string id;
  FetchStatus status = FetchStatus::Unavailable;
  std::string path;
  std::string detail;

  bool operator==(const FetchEntry&) const = default;
};

struct FetchReport {
  std::vector<FetchEntry> entries;  // corpus order

  std::size_t count(FetchStatus s) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [s](const FetchEntry& e) { return e.status == s; }));
  }
};

inline nlohmann::ordered_json to_json(const FetchReport& r) {
  nlohmann::ordered_json j;
  j["cached"] = r.count(FetchStatus::Cached);
  j["downloaded"] = r.count(FetchStatus::Downloaded);
  j["unavailable"] = r.count(FetchStatus::Unavailable);
  auto& items = j["articles"] = nlohmann::ordered_json::array();
  for (const auto& e : r.entries) {
    nlohmann::ordered_json item;
    item["id"] = e.id;
    item["status"] = std::string(to_string(e.status));
    item["path"] = e.path;
    if (!e.detail.empty()) item["detail"] = e.detail;
    items.push_back(std::move(item));
  }
  return j;
}

// Downloads url into dest; returns an empty string on success, otherwise the reason.
using Downloader = std::function<std::string(const std::string& url, const std::filesystem::path& dest)>;

inline std::string curl_download(const std::string& url, const std::filesystem::path& dest) {
  static std::once_flag init;
  std::call_once(init, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });

  std::FILE* f = std::fopen(dest.string().c_str(), "wb");
  if (!f) return "cannot open " + dest.string();
  CURL* curl = curl_easy_init();
  if (!curl) {
    std::fclose(f);
    return "curl_easy_init failed";
  }
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, f);
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 15L);
  curl_easy_setopt(curl, CURLOPT_TIMEOUT, 60L);
  curl_easy_setopt(curl, CURLOPT_NOSIGNAL, 1L);
  curl_easy_setopt(curl, CURLOPT_USERAGENT, "btic-fetch/1.0");
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  std::fclose(f);
  if (rc != CURLE_OK) return curl_easy_strerror(rc);
  return {};
}

inline std::filesystem::path cache_path_for(const std::filesystem::path& cache_dir, const std::string& url) {
  char name[32];
  std::snprintf(name, sizeof(name), "%016llx", static_cast<unsigned long long>(fnv1a64(url)));
  std::string ext = std::filesystem::path(url.substr(0, url.find_first_of("?#"))).extension().string();
  if (ext.size() > 5 || ext.find('/') != std::string::npos) ext.clear();
  return cache_dir / (std::string(name) + (ext.empty() ? ".img" : ext));
}

// Resolves every article's image to a local decodable file and records it in
// Article::image_path (cleared when unavailable). URL images are cached under
// cache_dir and never re-downloaded once a decodable copy exists. Per-item
// failures, including undecodable payloads, mark that article unavailable.
inline FetchReport fetch_images(Corpus& corpus, const std::filesystem::path& cache_dir, int max_parallel = 4,
                                const Downloader& download = curl_download) {
  std::filesystem::create_directories(cache_dir);
  FetchReport report;
  report.entries.resize(corpus.articles.size());

  auto resolve = [&](std::size_t i) {
    Article& a = corpus.articles[i];
    FetchEntry& e = report.entries[i];
    e.id = a.id;
    if (!is_url(a.image_ref)) {
      if (is_decodable(a.image_ref)) {
        e.status = FetchStatus::Cached;
        e.path = a.image_ref;
      } else {
        e.detail = "local image missing or undecodable";
      }
      return;
    }
    const auto dest = cache_path_for(cache_dir, a.image_ref);
    if (is_decodable(dest)) {
      e.status = FetchStatus::Cached;
      e.path = dest.string();
      return;
    }
    auto tmp = dest;
    tmp += ".part";
    std::string err = download(a.image_ref, tmp);
    if (err.empty() && !is_decodable(tmp)) err = "downloaded payload is not a decodable image";
    if (!err.empty()) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      e.detail = err;
      return;
    }
    std::filesystem::rename(tmp, dest);
    e.status = FetchStatus::Downloaded;
    e.path = dest.string();
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < corpus.articles.size(); i = next++) resolve(i);
  };
  const int workers = std::max(1, std::min<int>(max_parallel, static_cast<int>(corpus.articles.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < corpus.articles.size(); ++i) corpus.articles[i].image_path = report.entries[i].path;
  return report;
}

}  // namespace btic
