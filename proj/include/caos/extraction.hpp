#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "caos/gateway.hpp"
#include "caos/lexicon.hpp"

namespace caos {

/// Few-shot prompt driving LLM object identification. The reply format is
/// pinned by the preamble ("respond with a comma-separated list of objects
/// only"); the version tag travels into every run manifest.
struct ExtractionPrompt {
  std::string preamble;
  struct Shot {
    std::string caption;
    std::vector<ObjectLabel> objects;
  };
  std::vector<Shot> shots;
  std::string version;

  static ExtractionPrompt load(const std::filesystem::path& path);
  void validate() const;  // at least one shot example
};

/// Parses a comma-separated object reply into lowercased, trimmed labels.
/// Items that do not look like short noun phrases are dropped; a reply
/// yielding nothing returns an empty list (callers log the warning).
std::vector<ObjectLabel> parse_object_reply(const std::string& reply);

/// Asks the extractor endpoint for the objects in `caption` (list L2 before
/// filtering). Gateway failures propagate; unparseable replies degrade to an
/// empty list with a logged warning.
std::vector<ObjectLabel> llm_extract_objects(const std::string& caption,
                                             Gateway& gateway,
                                             const EndpointDescriptor& endpoint,
                                             const ExtractionPrompt& prompt,
                                             const Decoding& decoding);

/// Keeps only candidates whose every token occurs in the caption
/// (case-insensitive, lemma-normalized), preserving order and deduplicating.
std::vector<ObjectLabel> verbatim_filter(const std::vector<ObjectLabel>& candidates,
                                         const std::string& caption);

/// Combines L1 (rule mentions) with verbatim-filtered LLM labels into the
/// ordered list L. L2 labels already in G or duplicating an L1 canonical are
/// dropped; survivors are placed at their first occurrence in the caption.
std::vector<ObjectMention> merge_ordered(const std::vector<ObjectMention>& l1,
                                         const std::vector<ObjectLabel>& l2_labels,
                                         const std::string& caption,
                                         const Vocabulary& vocab);

}  // namespace caos
