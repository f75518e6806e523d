#include "caos/text.hpp"

#include <cctype>

namespace caos::text {

namespace {

bool is_token_char(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c))
                           : static_cast<char>(c));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_token_char(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    tokens.push_back(Token{to_lower(text.substr(start, i - start)), start, i - start});
  }
  return tokens;
}

std::string lemma(std::string_view word) {
  std::string w(word);
  // possessives: dog's -> dog, dogs' -> dogs (then plural rules apply)
  if (w.size() >= 3 && ends_with(w, "'s")) w.resize(w.size() - 2);
  if (w.size() >= 2 && ends_with(w, "'")) w.resize(w.size() - 1);
  if (w == "buses" || w == "busses") return "bus";
  // berries -> berry
  if (w.size() >= 4 && ends_with(w, "ies")) {
    w.replace(w.size() - 3, 3, "y");
    return w;
  }
  // boxes -> box, dishes -> dish, glasses -> glass, benches -> bench
  if (w.size() >= 4 && ends_with(w, "es")) {
    std::string_view stem(w.data(), w.size() - 2);
    if (ends_with(stem, "ss") || ends_with(stem, "x") || ends_with(stem, "z") ||
        ends_with(stem, "ch") || ends_with(stem, "sh")) {
      w.resize(w.size() - 2);
      return w;
    }
  }
  // dogs -> dog, horses -> horse; leaves -ss (grass), -us (cactus),
  // -is (tennis) alone
  if (w.size() >= 3 && ends_with(w, "s") && !ends_with(w, "ss") &&
      !ends_with(w, "us") && !ends_with(w, "is")) {
    w.resize(w.size() - 1);
  }
  return w;
}

std::string lemma_phrase(std::string_view phrase) {
  std::string out;
  for (const Token& tok : tokenize(phrase)) {
    if (!out.empty()) out.push_back(' ');
    out += lemma(tok.lower);
  }
  return out;
}

}  // namespace caos::text
