#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "caos/errors.hpp"
#include "caos/similarity.hpp"

namespace caos {

/// The in-domain vocabulary: the set G of known object labels plus a
/// surface-form -> canonical synonym map. Canonical labels are their own
/// synonyms.
class Vocabulary {
 public:
  /// File format: `canonical: syn1, syn2, ...` per line, `#` comments.
  /// A line with no colon declares a canonical with no extra synonyms.
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_entries(
      const std::map<std::string, std::vector<std::string>>& entries);

  bool contains(const ObjectLabel& canonical) const {
    return canonicals_.count(canonical) > 0;
  }
  /// Resolves a surface form (exact or lemma-normalized) to its canonical
  /// label, or nullopt for out-of-domain phrases.
  std::optional<ObjectLabel> canonicalize(const std::string& surface) const;

  const std::set<ObjectLabel>& labels() const { return canonicals_; }
  /// lemma-normalized surface -> canonical, the index the parser scans with.
  const std::map<std::string, ObjectLabel>& surface_index() const {
    return lemma_surfaces_;
  }
  std::size_t size() const { return canonicals_.size(); }

 private:
  void add_surface(const std::string& surface, const ObjectLabel& canonical);

  std::set<ObjectLabel> canonicals_;
  std::map<std::string, ObjectLabel> surfaces_;        // raw lowercase surface
  std::map<std::string, ObjectLabel> lemma_surfaces_;  // lemma-normalized
};

/// One object found in a caption.
struct ObjectMention {
  ObjectLabel label;      // canonical form
  std::string surface;    // exact substring of the caption
  std::size_t offset = 0; // byte offset of the surface in the caption
  enum class Source { rule, llm } source = Source::rule;
  bool in_domain = true;  // label in G
};

const char* mention_source_name(ObjectMention::Source s);

/// Rule-based parse (list L1): finds vocabulary surface forms in the
/// caption after lowercasing and plural lemmatization, longest match first,
/// ordered by offset and deduplicated to the first mention per canonical.
std::vector<ObjectMention> parse_in_domain_objects(const std::string& caption,
                                                   const Vocabulary& vocab);

/// Training-set object counts, the source of the top-k pool K.
class FrequencyTable {
 public:
  /// File format: `label<TAB>count` per line; labels must canonicalize
  /// into the vocabulary.
  static FrequencyTable load(const std::filesystem::path& path,
                             const Vocabulary& vocab);
  static FrequencyTable from_counts(std::map<ObjectLabel, std::uint64_t> counts);

  /// The k most frequent labels, descending by count, ties broken
  /// lexicographically. Throws on k outside [1, size()].
  std::vector<ObjectLabel> top_k(std::size_t k) const;

  std::uint64_t count(const ObjectLabel& label) const;
  std::uint64_t total() const { return total_; }
  std::size_t size() const { return counts_.size(); }

 private:
  std::map<ObjectLabel, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Unordered-pair co-occurrence counts over the training set.
class CoOccurrenceTable {
 public:
  /// File format: `label_a<TAB>label_b<TAB>count`; repeated pairs accumulate.
  static CoOccurrenceTable load(const std::filesystem::path& path,
                                const Vocabulary& vocab);
  static CoOccurrenceTable from_pairs(
      const std::vector<std::tuple<ObjectLabel, ObjectLabel, std::uint64_t>>& pairs);

  /// The partner most frequently co-occurring with `label`; ties broken
  /// lexicographically. Throws Errc::no_cooccurrence when the label appears
  /// in no pair.
  ObjectLabel most_frequent_cooccurrer(const ObjectLabel& label) const;

  bool has(const ObjectLabel& label) const {
    return partners_.count(label) > 0;
  }
  std::size_t pair_count() const { return pairs_; }

 private:
  // label -> partner -> count (stored both ways)
  std::map<ObjectLabel, std::map<ObjectLabel, std::uint64_t>> partners_;
  std::size_t pairs_ = 0;
};

}  // namespace caos
