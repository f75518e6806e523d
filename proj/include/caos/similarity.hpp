#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "caos/errors.hpp"

namespace caos {

/// A canonical object label: trimmed, lowercase, may contain spaces
/// ("dining table").
using ObjectLabel = std::string;

struct Vector {
  std::vector<double> components;

  std::size_t dimension() const { return components.size(); }
  double norm() const;
};

/// dot(a,b) / (|a||b|), clamped to [-1, 1].
/// Throws Errc::dimension_mismatch / Errc::degenerate_vector.
double cosine_similarity(const Vector& a, const Vector& b);

/// Label -> vector source shared by all scoring. File-backed stores hold
/// word vectors in memory; endpoint-backed stores fetch whole labels from a
/// remote embedder and persist them in a local cache so reruns are
/// deterministic and offline-replayable.
class EmbeddingStore {
 public:
  virtual ~EmbeddingStore() = default;

  const std::string& name() const { return name_; }
  std::size_t dimension() const { return dimension_; }

  /// Resolves a label to a vector. Single-token labels resolve directly;
  /// multi-word labels under word-level stores use the unweighted mean of
  /// the token vectors that are present. Throws Errc::out_of_vocabulary
  /// when nothing resolves.
  virtual Vector embed(const ObjectLabel& label) const = 0;

 protected:
  EmbeddingStore(std::string name, std::size_t dimension)
      : name_(std::move(name)), dimension_(dimension) {}

  std::string name_;
  // endpoint-backed stores learn their dimension from the first vector
  mutable std::size_t dimension_;
};

/// Word-level store in the GloVe text convention: one `token v1 .. vd` line
/// per entry, dimension inferred from the first line.
class FileEmbeddingStore final : public EmbeddingStore {
 public:
  static std::shared_ptr<FileEmbeddingStore> load(const std::filesystem::path& path,
                                                  std::string name = {});
  static std::shared_ptr<FileEmbeddingStore> from_entries(
      std::string name, std::map<std::string, Vector> entries);

  Vector embed(const ObjectLabel& label) const override;

  bool contains_token(const std::string& token) const {
    return entries_.count(token) > 0;
  }
  std::size_t size() const { return entries_.size(); }

 private:
  FileEmbeddingStore(std::string name, std::size_t dimension,
                     std::map<std::string, Vector> entries)
      : EmbeddingStore(std::move(name), dimension), entries_(std::move(entries)) {}

  std::map<std::string, Vector> entries_;
};

/// Fetches one vector per label text from a remote endpoint; every fetched
/// vector is appended to a cache file keyed by (store name, label).
class EndpointEmbeddingStore final : public EmbeddingStore {
 public:
  using FetchFn = std::function<std::vector<std::vector<double>>(
      const std::vector<std::string>& texts)>;

  /// `cache_path` may be empty (in-memory cache only). The fetcher is
  /// invoked for cache misses; pass nullptr to force cache-only operation.
  EndpointEmbeddingStore(std::string name, FetchFn fetch,
                         std::filesystem::path cache_path);

  Vector embed(const ObjectLabel& label) const override;

  std::size_t cache_hits() const;
  std::size_t cache_misses() const;

 private:
  void load_cache();
  void persist(const ObjectLabel& label, const Vector& v) const;

  FetchFn fetch_;
  std::filesystem::path cache_path_;
  mutable std::shared_mutex mutex_;
  mutable std::map<ObjectLabel, Vector> cache_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

/// Convenience wrapper for the virtual lookup; kept as a free function so
/// scoring code reads like the similarity algebra it implements.
inline Vector embed_object(const ObjectLabel& label, const EmbeddingStore& store) {
  return store.embed(label);
}

struct MaxSimilarity {
  double value = 0.0;
  std::size_t skipped = 0;  // pool members dropped as out-of-vocabulary
};

/// Maximum cosine similarity between `target` and any embeddable member of
/// `pool`. Pool members that fail lookup are skipped and tallied; an
/// unembeddable target throws Errc::out_of_vocabulary, an empty or fully
/// skipped pool throws Errc::empty_pool.
MaxSimilarity max_similarity(const ObjectLabel& target,
                             const std::set<ObjectLabel>& pool,
                             const EmbeddingStore& store);

}  // namespace caos
