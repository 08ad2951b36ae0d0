#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "less/vpu.hpp"

namespace less {

/// Directory of per-slide float32 arrays plus a sidecar `index.tsv`:
///
///   slide_id  scale  kind  file  rows  cols
///
/// scale is "s" or "l"; kind is "embedding" or "log_prob"; file is relative
/// to the directory and holds rows*cols little-endian float32 values in
/// row-major order.
class EmbeddingStore {
 public:
  static constexpr const char* kIndexName = "index.tsv";

  struct Entry {
    std::string slide_id;
    char scale = 's';
    std::string kind;
    std::string file;
    long rows = 0;
    long cols = 0;
  };

  /// Opens an existing store. Throws MissingArtifactError when absent.
  static EmbeddingStore open(const std::filesystem::path& dir);

  /// Starts a new store; entries become visible once `finish()` writes the index.
  static EmbeddingStore create(const std::filesystem::path& dir);

  void write(const vpu::SlideEmbedding& e);
  void finish() const;

  bool contains(const std::string& slide_id) const;
  std::vector<std::string> slide_ids() const;
  vpu::SlideEmbedding read(const std::string& slide_id) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  explicit EmbeddingStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path dir_;
  std::vector<Entry> entries_;
  std::map<std::string, std::vector<std::size_t>> by_slide_;
};

}  // namespace less
