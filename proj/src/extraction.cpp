#include "caos/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "caos/text.hpp"

namespace caos {

using nlohmann::json;

ExtractionPrompt ExtractionPrompt::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, "prompt file not found: " + path.string());
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw Error(Errc::parse, "prompt file is not valid JSON: " + path.string());
  }
  ExtractionPrompt prompt;
  try {
    prompt.preamble = doc.at("preamble").get<std::string>();
    prompt.version = doc.at("version").get<std::string>();
    for (const auto& shot : doc.at("shots")) {
      prompt.shots.push_back(Shot{
          shot.at("caption").get<std::string>(),
          shot.at("objects").get<std::vector<std::string>>()});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
  prompt.validate();
  return prompt;
}

void ExtractionPrompt::validate() const {
  if (shots.empty()) {
    throw Error(Errc::config, "extraction prompt needs at least one shot example");
  }
  if (preamble.empty()) {
    throw Error(Errc::config, "extraction prompt has an empty preamble");
  }
}

std::vector<ObjectLabel> parse_object_reply(const std::string& reply) {
  std::vector<ObjectLabel> labels;
  std::size_t start = 0;
  const std::string_view view(reply);
  while (start <= view.size()) {
    std::size_t end = view.find(',', start);
    if (end == std::string_view::npos) end = view.size();
    std::string_view item = text::trim(view.substr(start, end - start));
    start = end + 1;
    while (!item.empty() && (item.back() == '.' || item.back() == ';')) {
      item.remove_suffix(1);
      item = text::trim(item);
    }
    if (item.empty() || item.size() > 40) continue;
    const auto tokens = text::tokenize(item);
    if (tokens.empty() || tokens.size() > 4) continue;
    // noun phrases only: reject items with stray punctuation
    bool clean = true;
    for (char c : item) {
      const unsigned char uc = static_cast<unsigned char>(c);
      if (!(std::isalnum(uc) || c == ' ' || c == '\'' || c == '-' || uc >= 0x80)) {
        clean = false;
        break;
      }
    }
    if (!clean) continue;
    labels.push_back(text::to_lower(item));
  }
  return labels;
}

std::vector<ObjectLabel> llm_extract_objects(const std::string& caption,
                                             Gateway& gateway,
                                             const EndpointDescriptor& endpoint,
                                             const ExtractionPrompt& prompt,
                                             const Decoding& decoding) {
  prompt.validate();
  std::vector<ChatTurn> turns;
  turns.push_back(ChatTurn::system_turn(prompt.preamble));
  for (const auto& shot : prompt.shots) {
    turns.push_back(ChatTurn::user_turn(shot.caption));
    std::string joined;
    for (const auto& obj : shot.objects) {
      if (!joined.empty()) joined += ", ";
      joined += obj;
    }
    turns.push_back(ChatTurn::assistant_turn(joined));
  }
  turns.push_back(ChatTurn::user_turn(caption));

  const std::string reply = gateway.chat_complete(endpoint, turns, decoding);
  auto labels = parse_object_reply(reply);
  if (labels.empty() && !std::string(text::trim(reply)).empty()) {
    spdlog::warn("extractor reply not parseable as an object list: '{}'", reply);
  }
  return labels;
}

std::vector<ObjectLabel> verbatim_filter(const std::vector<ObjectLabel>& candidates,
                                         const std::string& caption) {
  std::set<std::string> caption_lemmas;
  for (const auto& tok : text::tokenize(caption)) {
    caption_lemmas.insert(text::lemma(tok.lower));
  }
  std::vector<ObjectLabel> kept;
  std::set<std::string> seen;  // dedup on the lemma-normalized form
  for (const ObjectLabel& candidate : candidates) {
    const auto tokens = text::tokenize(candidate);
    if (tokens.empty()) continue;
    bool all_present = true;
    for (const auto& tok : tokens) {
      if (!caption_lemmas.count(text::lemma(tok.lower))) {
        all_present = false;
        break;
      }
    }
    if (!all_present) continue;
    if (seen.insert(text::lemma_phrase(candidate)).second) {
      kept.push_back(candidate);
    }
  }
  return kept;
}

namespace {

/// First occurrence of the candidate's lemma token sequence in the caption;
/// falls back to the first token alone when the phrase is not contiguous.
std::optional<std::pair<std::size_t, std::string>> locate(
    const std::vector<text::Token>& tokens, const std::vector<std::string>& lemmas,
    const std::string& caption, const std::vector<std::string>& target) {
  if (target.empty()) return std::nullopt;
  for (std::size_t i = 0; i + target.size() <= tokens.size(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < target.size(); ++j) {
      if (lemmas[i + j] != target[j]) {
        ok = false;
        break;
      }
    }
    if (ok) {
      const std::size_t begin = tokens[i].offset;
      const auto& last = tokens[i + target.size() - 1];
      return std::make_pair(begin,
                            caption.substr(begin, last.offset + last.length - begin));
    }
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (lemmas[i] == target.front()) {
      return std::make_pair(tokens[i].offset,
                            caption.substr(tokens[i].offset, tokens[i].length));
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<ObjectMention> merge_ordered(const std::vector<ObjectMention>& l1,
                                         const std::vector<ObjectLabel>& l2_labels,
                                         const std::string& caption,
                                         const Vocabulary& vocab) {
  std::set<ObjectLabel> taken;
  std::set<std::size_t> taken_offsets;
  for (const auto& m : l1) {
    taken.insert(m.label);
    taken_offsets.insert(m.offset);
  }

  const auto tokens = text::tokenize(caption);
  std::vector<std::string> lemmas;
  lemmas.reserve(tokens.size());
  for (const auto& tok : tokens) lemmas.push_back(text::lemma(tok.lower));

  std::vector<ObjectMention> merged = l1;
  for (const ObjectLabel& raw : l2_labels) {
    // L2 is defined as objects NOT in G: anything that canonicalizes into
    // the vocabulary belongs to L1's jurisdiction and is dropped here.
    if (vocab.canonicalize(raw)) continue;
    const std::string canonical = text::lemma_phrase(raw);
    if (canonical.empty() || taken.count(canonical)) continue;

    std::vector<std::string> target;
    for (const auto& tok : text::tokenize(canonical)) target.push_back(tok.lower);
    auto located = locate(tokens, lemmas, caption, target);
    if (!located) {
      throw Error(Errc::internal, "verbatim-filtered label '" + raw +
                                      "' not locatable in caption");
    }
    if (taken_offsets.count(located->first)) continue;  // overlaps a rule mention

    ObjectMention m;
    m.label = canonical;
    m.surface = located->second;
    m.offset = located->first;
    m.source = ObjectMention::Source::llm;
    m.in_domain = false;
    taken.insert(canonical);
    taken_offsets.insert(m.offset);
    merged.push_back(std::move(m));
  }

  std::sort(merged.begin(), merged.end(),
            [](const ObjectMention& a, const ObjectMention& b) {
              return a.offset < b.offset;
            });
  return merged;
}

}  // namespace caos
