#include "caos/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include <nlohmann/json.hpp>

#include "caos/text.hpp"

namespace caos {

using nlohmann::json;

double Vector::norm() const {
  double sum = 0.0;
  for (double c : components) sum += c * c;
  return std::sqrt(sum);
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.dimension() != b.dimension()) {
    throw Error(Errc::dimension_mismatch,
                "cosine_similarity: dimensions differ (" +
                    std::to_string(a.dimension()) + " vs " +
                    std::to_string(b.dimension()) + ")");
  }
  if (a.dimension() == 0) {
    throw Error(Errc::invalid_input, "cosine_similarity: empty vectors");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.components.size(); ++i) {
    dot += a.components[i] * b.components[i];
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw Error(Errc::degenerate_vector, "cosine_similarity: zero-norm vector");
  }
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::shared_ptr<FileEmbeddingStore> FileEmbeddingStore::load(
    const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, "embedding file not found: " + path.string());
  }
  if (name.empty()) name = path.stem().string();

  std::map<std::string, Vector> entries;
  std::size_t dimension = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    Vector v;
    double x;
    while (ss >> x) {
      if (!std::isfinite(x)) {
        throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                     ": non-finite component");
      }
      v.components.push_back(x);
    }
    if (token.empty() || v.components.empty() || !ss.eof()) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": malformed embedding line");
    }
    if (dimension == 0) {
      dimension = v.dimension();
    } else if (v.dimension() != dimension) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": dimension " + std::to_string(v.dimension()) +
                                   " != " + std::to_string(dimension));
    }
    std::string key = text::to_lower(token);
    if (!entries.emplace(std::move(key), std::move(v)).second) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": duplicate token '" + token + "'");
    }
  }
  if (entries.empty()) {
    throw Error(Errc::parse, "embedding file is empty: " + path.string());
  }
  return std::shared_ptr<FileEmbeddingStore>(
      new FileEmbeddingStore(std::move(name), dimension, std::move(entries)));
}

std::shared_ptr<FileEmbeddingStore> FileEmbeddingStore::from_entries(
    std::string name, std::map<std::string, Vector> entries) {
  if (entries.empty()) {
    throw Error(Errc::invalid_input, "embedding store needs at least one entry");
  }
  const std::size_t dimension = entries.begin()->second.dimension();
  for (const auto& [token, v] : entries) {
    if (v.dimension() != dimension) {
      throw Error(Errc::invalid_input,
                  "embedding store entries disagree on dimension at '" + token + "'");
    }
  }
  return std::shared_ptr<FileEmbeddingStore>(
      new FileEmbeddingStore(std::move(name), dimension, std::move(entries)));
}

Vector FileEmbeddingStore::embed(const ObjectLabel& label) const {
  if (label.empty()) {
    throw Error(Errc::invalid_input, "embed: empty label");
  }
  std::vector<const Vector*> found;
  std::size_t token_count = 0;
  for (const auto& tok : text::tokenize(label)) {
    ++token_count;
    auto it = entries_.find(tok.lower);
    if (it == entries_.end()) {
      // word-level stores carry singular nouns; retry the lemma
      it = entries_.find(text::lemma(tok.lower));
    }
    if (it != entries_.end()) found.push_back(&it->second);
  }
  if (found.empty()) {
    throw Error(Errc::out_of_vocabulary,
                "label '" + label + "' not in store '" + name_ + "'");
  }
  if (token_count == 1) return *found.front();

  Vector mean;
  mean.components.assign(dimension_, 0.0);
  for (const Vector* v : found) {
    for (std::size_t i = 0; i < dimension_; ++i) {
      mean.components[i] += v->components[i];
    }
  }
  for (double& c : mean.components) c /= static_cast<double>(found.size());
  return mean;
}

EndpointEmbeddingStore::EndpointEmbeddingStore(std::string name, FetchFn fetch,
                                               std::filesystem::path cache_path)
    : EmbeddingStore(std::move(name), 0),
      fetch_(std::move(fetch)),
      cache_path_(std::move(cache_path)) {
  load_cache();
}

void EndpointEmbeddingStore::load_cache() {
  if (cache_path_.empty()) return;
  std::ifstream in(cache_path_);
  if (!in) return;  // nothing cached yet
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || rec.value("store", "") != name_) continue;
    Vector v;
    v.components = rec.at("vector").get<std::vector<double>>();
    if (dimension_ == 0) dimension_ = v.dimension();
    cache_[rec.at("label").get<std::string>()] = std::move(v);
  }
}

void EndpointEmbeddingStore::persist(const ObjectLabel& label, const Vector& v) const {
  if (cache_path_.empty()) return;
  std::ofstream out(cache_path_, std::ios::app);
  json rec;
  rec["store"] = name_;
  rec["label"] = label;
  rec["vector"] = v.components;
  out << rec.dump() << "\n";
}

Vector EndpointEmbeddingStore::embed(const ObjectLabel& label) const {
  if (label.empty()) {
    throw Error(Errc::invalid_input, "embed: empty label");
  }
  {
    std::shared_lock lock(mutex_);
    auto it = cache_.find(label);
    if (it != cache_.end()) {
      hits_.fetch_add(1, std::memory_order_relaxed);
      return it->second;
    }
  }
  if (!fetch_) {
    throw Error(Errc::out_of_vocabulary,
                "label '" + label + "' not cached for store '" + name_ +
                    "' and no embedder endpoint is available");
  }
  auto vectors = fetch_({label});
  if (vectors.size() != 1 || vectors[0].empty()) {
    throw Error(Errc::gateway, "embedder returned " + std::to_string(vectors.size()) +
                                   " vectors for one text");
  }
  Vector v{std::move(vectors[0])};

  std::unique_lock lock(mutex_);
  misses_.fetch_add(1, std::memory_order_relaxed);
  if (dimension_ == 0) dimension_ = v.dimension();
  if (v.dimension() != dimension_) {
    throw Error(Errc::gateway, "embedder dimension changed mid-run for store '" +
                                   name_ + "'");
  }
  auto [it, inserted] = cache_.emplace(label, std::move(v));
  if (inserted) persist(label, it->second);
  return it->second;
}

std::size_t EndpointEmbeddingStore::cache_hits() const {
  return hits_.load(std::memory_order_relaxed);
}

std::size_t EndpointEmbeddingStore::cache_misses() const {
  return misses_.load(std::memory_order_relaxed);
}

MaxSimilarity max_similarity(const ObjectLabel& target,
                             const std::set<ObjectLabel>& pool,
                             const EmbeddingStore& store) {
  if (pool.empty()) {
    throw Error(Errc::empty_pool, "max_similarity: empty pool");
  }
  const Vector target_vec = embed_object(target, store);

  MaxSimilarity result;
  bool any = false;
  for (const ObjectLabel& member : pool) {
    Vector v;
    try {
      v = embed_object(member, store);
    } catch (const Error& e) {
      if (e.code() == Errc::out_of_vocabulary) {
        ++result.skipped;
        spdlog::debug("max_similarity: skipping OOV pool member '{}'", member);
        continue;
      }
      throw;
    }
    const double sim = cosine_similarity(target_vec, v);
    if (!any || sim > result.value) result.value = sim;
    any = true;
  }
  if (!any) {
    throw Error(Errc::empty_pool,
                "max_similarity: all " + std::to_string(pool.size()) +
                    " pool members are out of vocabulary");
  }
  return result;
}

}  // namespace caos
