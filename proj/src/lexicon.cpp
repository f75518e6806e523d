#include "caos/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "caos/text.hpp"

namespace caos {

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find(sep, start);
    if (end == std::string_view::npos) end = s.size();
    parts.emplace_back(text::trim(s.substr(start, end - start)));
    start = end + 1;
  }
  return parts;
}

}  // namespace

void Vocabulary::add_surface(const std::string& surface, const ObjectLabel& canonical) {
  if (surface.empty()) return;
  auto [it, inserted] = surfaces_.emplace(surface, canonical);
  if (!inserted && it->second != canonical) {
    throw Error(Errc::parse, "surface form '" + surface +
                                 "' maps to both '" + it->second + "' and '" +
                                 canonical + "'");
  }
  const std::string lemmatized = text::lemma_phrase(surface);
  auto [lit, linserted] = lemma_surfaces_.emplace(lemmatized, canonical);
  if (!linserted && lit->second != canonical) {
    throw Error(Errc::parse, "surface forms collide after lemmatization: '" +
                                 lemmatized + "' maps to both '" + lit->second +
                                 "' and '" + canonical + "'");
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, "vocabulary file not found: " + path.string());
  }
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view body = text::trim(line);
    if (body.empty() || body.front() == '#') continue;
    std::string canonical;
    std::vector<std::string> synonyms;
    const std::size_t colon = body.find(':');
    if (colon == std::string_view::npos) {
      canonical = text::to_lower(text::trim(body));
    } else {
      canonical = text::to_lower(text::trim(body.substr(0, colon)));
      for (auto& syn : split(body.substr(colon + 1), ',')) {
        if (!syn.empty()) synonyms.push_back(text::to_lower(syn));
      }
    }
    if (canonical.empty()) {
      throw Error(Errc::parse, "vocabulary line with empty canonical: '" + line + "'");
    }
    vocab.canonicals_.insert(canonical);
    vocab.add_surface(canonical, canonical);
    for (const auto& syn : synonyms) vocab.add_surface(syn, canonical);
  }
  if (vocab.canonicals_.empty()) {
    throw Error(Errc::parse, "vocabulary file is empty: " + path.string());
  }
  return vocab;
}

Vocabulary Vocabulary::from_entries(
    const std::map<std::string, std::vector<std::string>>& entries) {
  Vocabulary vocab;
  for (const auto& [canonical, synonyms] : entries) {
    const std::string canon = text::to_lower(text::trim(canonical));
    if (canon.empty()) {
      throw Error(Errc::invalid_input, "empty canonical label");
    }
    vocab.canonicals_.insert(canon);
    vocab.add_surface(canon, canon);
    for (const auto& syn : synonyms) {
      vocab.add_surface(text::to_lower(std::string(text::trim(syn))), canon);
    }
  }
  if (vocab.canonicals_.empty()) {
    throw Error(Errc::invalid_input, "empty vocabulary");
  }
  return vocab;
}

std::optional<ObjectLabel> Vocabulary::canonicalize(const std::string& surface) const {
  const std::string lowered = text::to_lower(std::string(text::trim(surface)));
  if (auto it = surfaces_.find(lowered); it != surfaces_.end()) return it->second;
  const std::string lemmatized = text::lemma_phrase(lowered);
  if (auto it = lemma_surfaces_.find(lemmatized); it != lemma_surfaces_.end()) {
    return it->second;
  }
  return std::nullopt;
}

const char* mention_source_name(ObjectMention::Source s) {
  return s == ObjectMention::Source::rule ? "rule" : "llm";
}

std::vector<ObjectMention> parse_in_domain_objects(const std::string& caption,
                                                   const Vocabulary& vocab) {
  const auto tokens = text::tokenize(caption);

  // Surface index keyed by first-token lemma; candidates per key sorted
  // longest first so "dining table" wins over "table".
  struct Candidate {
    std::vector<std::string> lemmas;
    const ObjectLabel* canonical;
  };
  std::map<std::string, std::vector<Candidate>> index;
  for (const auto& [surface, canonical] : vocab.surface_index()) {
    Candidate c;
    for (const auto& tok : text::tokenize(surface)) c.lemmas.push_back(tok.lower);
    if (c.lemmas.empty()) continue;
    c.canonical = &canonical;
    index[c.lemmas.front()].push_back(std::move(c));
  }
  for (auto& [first, candidates] : index) {
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                return a.lemmas.size() > b.lemmas.size();
              });
  }

  std::vector<std::string> lemmas;
  lemmas.reserve(tokens.size());
  for (const auto& tok : tokens) lemmas.push_back(text::lemma(tok.lower));

  std::vector<ObjectMention> mentions;
  std::set<ObjectLabel> seen;
  std::size_t i = 0;
  while (i < tokens.size()) {
    auto it = index.find(lemmas[i]);
    std::size_t matched = 0;
    const ObjectLabel* canonical = nullptr;
    if (it != index.end()) {
      for (const Candidate& cand : it->second) {
        if (i + cand.lemmas.size() > tokens.size()) continue;
        bool ok = true;
        for (std::size_t j = 1; j < cand.lemmas.size(); ++j) {
          if (lemmas[i + j] != cand.lemmas[j]) {
            ok = false;
            break;
          }
        }
        if (ok) {
          matched = cand.lemmas.size();
          canonical = cand.canonical;
          break;  // candidates are longest-first
        }
      }
    }
    if (canonical == nullptr) {
      ++i;
      continue;
    }
    const std::size_t begin = tokens[i].offset;
    const std::size_t end = tokens[i + matched - 1].offset + tokens[i + matched - 1].length;
    if (seen.insert(*canonical).second) {
      ObjectMention m;
      m.label = *canonical;
      m.surface = caption.substr(begin, end - begin);
      m.offset = begin;
      m.source = ObjectMention::Source::rule;
      m.in_domain = true;
      mentions.push_back(std::move(m));
    }
    i += matched;
  }
  return mentions;
}

FrequencyTable FrequencyTable::load(const std::filesystem::path& path,
                                    const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, "frequency file not found: " + path.string());
  }
  std::map<ObjectLabel, std::uint64_t> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = text::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const std::size_t tab = body.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": expected `label<TAB>count`");
    }
    const std::string raw_label(text::trim(body.substr(0, tab)));
    auto canonical = vocab.canonicalize(raw_label);
    if (!canonical) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": label '" + raw_label + "' not in vocabulary");
    }
    std::uint64_t n = 0;
    try {
      n = std::stoull(std::string(text::trim(body.substr(tab + 1))));
    } catch (const std::exception&) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": bad count");
    }
    counts[*canonical] += n;
  }
  if (counts.empty()) {
    throw Error(Errc::parse, "frequency file is empty: " + path.string());
  }
  return from_counts(std::move(counts));
}

FrequencyTable FrequencyTable::from_counts(std::map<ObjectLabel, std::uint64_t> counts) {
  FrequencyTable table;
  table.counts_ = std::move(counts);
  for (const auto& [label, n] : table.counts_) table.total_ += n;
  return table;
}

std::vector<ObjectLabel> FrequencyTable::top_k(std::size_t k) const {
  if (k < 1 || k > counts_.size()) {
    throw Error(Errc::invalid_input,
                "top_k: k=" + std::to_string(k) + " outside [1, " +
                    std::to_string(counts_.size()) + "]");
  }
  std::vector<std::pair<ObjectLabel, std::uint64_t>> ordered(counts_.begin(),
                                                             counts_.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<ObjectLabel> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(ordered[i].first);
  return out;
}

std::uint64_t FrequencyTable::count(const ObjectLabel& label) const {
  auto it = counts_.find(label);
  return it == counts_.end() ? 0 : it->second;
}

CoOccurrenceTable CoOccurrenceTable::load(const std::filesystem::path& path,
                                          const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, "co-occurrence file not found: " + path.string());
  }
  std::vector<std::tuple<ObjectLabel, ObjectLabel, std::uint64_t>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = text::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const std::size_t t1 = body.find('\t');
    const std::size_t t2 = t1 == std::string_view::npos
                               ? std::string_view::npos
                               : body.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": expected `label_a<TAB>label_b<TAB>count`");
    }
    auto a = vocab.canonicalize(std::string(text::trim(body.substr(0, t1))));
    auto b = vocab.canonicalize(std::string(text::trim(body.substr(t1 + 1, t2 - t1 - 1))));
    if (!a || !b) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": label not in vocabulary");
    }
    std::uint64_t n = 0;
    try {
      n = std::stoull(std::string(text::trim(body.substr(t2 + 1))));
    } catch (const std::exception&) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": bad count");
    }
    pairs.emplace_back(*a, *b, n);
  }
  return from_pairs(pairs);
}

CoOccurrenceTable CoOccurrenceTable::from_pairs(
    const std::vector<std::tuple<ObjectLabel, ObjectLabel, std::uint64_t>>& pairs) {
  CoOccurrenceTable table;
  for (const auto& [a, b, n] : pairs) {
    if (a == b) {
      throw Error(Errc::invalid_input, "co-occurrence pair of a label with itself: '" + a + "'");
    }
    table.partners_[a][b] += n;
    table.partners_[b][a] += n;
  }
  for (const auto& [label, partners] : table.partners_) {
    table.pairs_ += partners.size();
  }
  table.pairs_ /= 2;
  return table;
}

ObjectLabel CoOccurrenceTable::most_frequent_cooccurrer(const ObjectLabel& label) const {
  auto it = partners_.find(label);
  if (it == partners_.end() || it->second.empty()) {
    throw Error(Errc::no_cooccurrence,
                "label '" + label + "' appears in no co-occurrence pair");
  }
  // map iteration is lexicographic, so ties keep the earlier partner
  auto best = it->second.begin();
  for (auto p = it->second.begin(); p != it->second.end(); ++p) {
    if (p->second > best->second) best = p;
  }
  return best->first;
}

}  // namespace caos
