#include <doctest.h>

#include "caos/text.hpp"

using namespace caos;

TEST_CASE("tokenize reports offsets and lowercases") {
  const auto tokens = text::tokenize("A man, riding a Horse!");
  REQUIRE(tokens.size() == 5);
  CHECK(tokens[0].lower == "a");
  CHECK(tokens[1].lower == "man");
  CHECK(tokens[1].offset == 2);
  CHECK(tokens[2].lower == "riding");
  CHECK(tokens[4].lower == "horse");
  CHECK(tokens[4].offset == 16);
}

TEST_CASE("tokenize keeps hyphens, apostrophes and UTF-8 runs intact") {
  const auto tokens = text::tokenize("the dog's t-shirt, café");
  REQUIRE(tokens.size() == 4);
  CHECK(tokens[1].lower == "dog's");
  CHECK(tokens[2].lower == "t-shirt");
  CHECK(tokens[3].lower == "café");
}

TEST_CASE("plural suffix rules") {
  CHECK(text::lemma("dogs") == "dog");
  CHECK(text::lemma("buses") == "bus");
  CHECK(text::lemma("bus") == "bus");
  CHECK(text::lemma("horses") == "horse");
  CHECK(text::lemma("suitcases") == "suitcase");
  CHECK(text::lemma("boxes") == "box");
  CHECK(text::lemma("dishes") == "dish");
  CHECK(text::lemma("glasses") == "glass");
  CHECK(text::lemma("berries") == "berry");
  CHECK(text::lemma("grass") == "grass");
  CHECK(text::lemma("tennis") == "tennis");
  CHECK(text::lemma("dog's") == "dog");
  CHECK(text::lemma("dogs'") == "dog");
  CHECK(text::lemma("person") == "person");
}

TEST_CASE("lemma_phrase normalizes multi-word labels") {
  CHECK(text::lemma_phrase("Coffee Mugs") == "coffee mug");
  CHECK(text::lemma_phrase("  dining   tables ") == "dining table");
  CHECK(text::lemma_phrase("") == "");
}
