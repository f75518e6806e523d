#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "caos/lexicon.hpp"
#include "support/fixture_world.hpp"

using namespace caos;

namespace {

Vocabulary fixture_vocab() {
  return Vocabulary::load(testing::fixtures_dir() / "vocab.txt");
}

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto dir = std::filesystem::temp_directory_path() / "caos_lexicon_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("vocabulary load and canonicalization") {
  const auto vocab = fixture_vocab();
  CHECK(vocab.size() == 10);
  CHECK(vocab.contains("person"));
  CHECK(vocab.contains("dining table"));
  CHECK(vocab.canonicalize("man") == ObjectLabel("person"));
  CHECK(vocab.canonicalize("Woman") == ObjectLabel("person"));
  CHECK(vocab.canonicalize("tables") == ObjectLabel("dining table"));
  CHECK(vocab.canonicalize("buses") == ObjectLabel("bus"));
  CHECK_FALSE(vocab.canonicalize("laptop").has_value());
}

TEST_CASE("vocabulary load errors") {
  SUBCASE("missing file") {
    CHECK_THROWS_AS(Vocabulary::load("/nonexistent/vocab.txt"), Error);
  }
  SUBCASE("empty file") {
    const auto path = write_temp("empty.txt", "# only a comment\n");
    CHECK_THROWS_AS(Vocabulary::load(path), Error);
  }
  SUBCASE("conflicting synonym") {
    const auto path = write_temp("dup.txt", "person: man\nmannequin: man\n");
    try {
      Vocabulary::load(path);
      FAIL("expected duplicate-synonym error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse);
      CHECK(std::string(e.what()).find("man") != std::string::npos);
    }
  }
  SUBCASE("repeating the same mapping is fine") {
    const auto path = write_temp("same.txt", "person: man, person\nperson: woman\n");
    const auto vocab = Vocabulary::load(path);
    CHECK(vocab.canonicalize("woman") == ObjectLabel("person"));
  }
}

TEST_CASE("rule parse finds vocabulary mentions in order") {
  const auto vocab = fixture_vocab();
  const auto mentions = parse_in_domain_objects("A man riding a horse", vocab);
  REQUIRE(mentions.size() == 2);
  CHECK(mentions[0].label == "person");
  CHECK(mentions[0].surface == "man");
  CHECK(mentions[0].offset == 2);
  CHECK(mentions[0].source == ObjectMention::Source::rule);
  CHECK(mentions[0].in_domain);
  CHECK(mentions[1].label == "horse");
  CHECK(mentions[1].offset == 15);
}

TEST_CASE("rule parse edge cases") {
  const auto vocab = fixture_vocab();

  SUBCASE("empty caption") {
    CHECK(parse_in_domain_objects("", vocab).empty());
  }
  SUBCASE("dedup keeps the first mention per canonical") {
    const auto mentions = parse_in_domain_objects("two dogs and a dog", vocab);
    REQUIRE(mentions.size() == 1);
    CHECK(mentions[0].label == "dog");
    CHECK(mentions[0].surface == "dogs");
    CHECK(mentions[0].offset == 4);
  }
  SUBCASE("longest match wins over its prefix and inner words") {
    const auto mentions = parse_in_domain_objects("a dining table", vocab);
    REQUIRE(mentions.size() == 1);
    CHECK(mentions[0].label == "dining table");
    CHECK(mentions[0].surface == "dining table");
  }
  SUBCASE("plural and synonym surfaces resolve") {
    const auto mentions = parse_in_domain_objects("kittens chase puppies", vocab);
    REQUIRE(mentions.size() == 2);
    CHECK(mentions[0].label == "cat");
    CHECK(mentions[1].label == "dog");
  }
}

TEST_CASE("parse output round-trips surfaces against the caption") {
  const auto vocab = fixture_vocab();
  std::ifstream in(testing::fixtures_dir() / "parser_fixture.json");
  REQUIRE(in.good());
  const auto fixture = nlohmann::json::parse(in);
  for (const auto& entry : fixture.at("captions")) {
    const std::string caption = entry.at("caption").get<std::string>();
    const auto mentions = parse_in_domain_objects(caption, vocab);
    std::size_t last_offset = 0;
    bool first = true;
    for (const auto& m : mentions) {
      // surface occurs at the stated offset
      CHECK(caption.substr(m.offset, m.surface.size()) == m.surface);
      if (!first) CHECK(m.offset > last_offset);
      last_offset = m.offset;
      first = false;
    }
    // determinism
    const auto again = parse_in_domain_objects(caption, vocab);
    REQUIRE(again.size() == mentions.size());
    for (std::size_t i = 0; i < mentions.size(); ++i) {
      CHECK(again[i].label == mentions[i].label);
      CHECK(again[i].offset == mentions[i].offset);
    }
  }
}

TEST_CASE("frequency table top_k") {
  const auto vocab = fixture_vocab();
  const auto freq = FrequencyTable::load(testing::fixtures_dir() / "freq.tsv", vocab);
  CHECK(freq.size() == 10);
  CHECK(freq.total() == 170);

  SUBCASE("ordering") {
    const auto top = freq.top_k(3);
    CHECK(top == std::vector<ObjectLabel>{"person", "chair", "car"});
  }
  SUBCASE("k out of range") {
    CHECK_THROWS_AS(freq.top_k(0), Error);
    CHECK_THROWS_AS(freq.top_k(11), Error);
  }
  SUBCASE("top_k(k) is a prefix of top_k(k+1)") {
    for (std::size_t k = 1; k < freq.size(); ++k) {
      const auto a = freq.top_k(k);
      const auto b = freq.top_k(k + 1);
      for (std::size_t i = 0; i < k; ++i) CHECK(a[i] == b[i]);
    }
  }
  SUBCASE("ties break lexicographically") {
    const auto table = FrequencyTable::from_counts({{"b", 5}, {"a", 5}, {"c", 1}});
    CHECK(table.top_k(1) == std::vector<ObjectLabel>{"a"});
    CHECK(table.top_k(2) == std::vector<ObjectLabel>{"a", "b"});
  }
  SUBCASE("unknown label rejected at load") {
    const auto path = write_temp("freq_bad.tsv", "wizard\t3\n");
    CHECK_THROWS_AS(FrequencyTable::load(path, vocab), Error);
  }
}

TEST_CASE("co-occurrence partner lookup") {
  const auto vocab = fixture_vocab();
  const auto cooc = CoOccurrenceTable::load(testing::fixtures_dir() / "cooc.tsv", vocab);

  CHECK(cooc.most_frequent_cooccurrer("dog") == "person");
  CHECK(cooc.most_frequent_cooccurrer("person") == "chair");
  CHECK(cooc.most_frequent_cooccurrer("bus") == "car");

  SUBCASE("absent label") {
    try {
      cooc.most_frequent_cooccurrer("frisbee999");
      FAIL("expected no-cooccurrence error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::no_cooccurrence);
    }
  }
  SUBCASE("ties break lexicographically") {
    const auto table = CoOccurrenceTable::from_pairs(
        {{"dog", "person", 5}, {"dog", "cat", 5}});
    CHECK(table.most_frequent_cooccurrer("dog") == "cat");
  }
}
