#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace caos::text {

/// A word-level token of a caption, with its position in the original text.
struct Token {
  std::string lower;   // lowercased token text
  std::size_t offset;  // byte offset in the source string
  std::size_t length;  // byte length in the source string
};

/// Splits text into word tokens (runs of alphanumerics, apostrophes and
/// hyphens; bytes >= 0x80 are kept so UTF-8 words survive intact).
std::vector<Token> tokenize(std::string_view text);

/// Maps a plural noun to its singular via a small closed suffix-rule table
/// (-ies, -es, -s). Input is expected lowercase; anything the rules do not
/// cover passes through unchanged.
std::string lemma(std::string_view word);

/// Lowercases, tokenizes and lemmatizes a phrase, rejoining with single
/// spaces ("Coffee Mugs" -> "coffee mug").
std::string lemma_phrase(std::string_view phrase);

std::string to_lower(std::string_view s);

/// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view s);

}  // namespace caos::text
