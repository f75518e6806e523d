#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "caos/similarity.hpp"
#include "support/fixture_world.hpp"

using namespace caos;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a caos::Error");
  return Errc::internal;
}

std::shared_ptr<FileEmbeddingStore> tiny_store() {
  std::map<std::string, Vector> entries;
  entries["dog"] = Vector{{1.0, 0.0, 0.0}};
  entries["dining"] = Vector{{1.0, 2.0, 3.0}};
  entries["table"] = Vector{{3.0, 2.0, 1.0}};
  entries["cat"] = Vector{{0.0, 1.0, 0.0}};
  entries["twin"] = Vector{{1.0, 0.0, 0.0}};  // identical to dog
  return FileEmbeddingStore::from_entries("tiny", std::move(entries));
}

}  // namespace

TEST_CASE("cosine similarity on pinned vectors") {
  CHECK(cosine_similarity(Vector{{1, 0}}, Vector{{1, 0}}) == doctest::Approx(1.0));
  CHECK(cosine_similarity(Vector{{1, 0}}, Vector{{0, 1}}) == doctest::Approx(0.0));
  // dot = 8, norms = 3 * 3
  CHECK(cosine_similarity(Vector{{1, 2, 2}}, Vector{{2, 1, 2}}) ==
        doctest::Approx(8.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("cosine similarity error contracts") {
  CHECK(code_of([] { cosine_similarity(Vector{{1, 0}}, Vector{{1, 0, 0}}); }) ==
        Errc::dimension_mismatch);
  CHECK(code_of([] { cosine_similarity(Vector{{0, 0}}, Vector{{1, 0}}); }) ==
        Errc::degenerate_vector);
}

TEST_CASE("cosine similarity is symmetric, scale invariant and bounded") {
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector a, b;
    for (int i = 0; i < 8; ++i) {
      a.components.push_back(dist(rng));
      b.components.push_back(dist(rng));
    }
    if (a.norm() == 0.0 || b.norm() == 0.0) continue;
    const double ab = cosine_similarity(a, b);
    const double ba = cosine_similarity(b, a);
    CHECK(std::abs(ab - ba) <= 1e-12);
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
    Vector scaled = a;
    const double c = scale(rng);
    for (double& v : scaled.components) v *= c;
    CHECK(cosine_similarity(scaled, b) == doctest::Approx(ab).epsilon(1e-9));
  }
}

TEST_CASE("embed_object resolves single tokens directly") {
  auto store = tiny_store();
  const Vector v = embed_object("dog", *store);
  CHECK(v.components == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("embed_object averages multi-word labels") {
  auto store = tiny_store();
  const Vector v = embed_object("dining table", *store);
  // mean of (1,2,3) and (3,2,1)
  CHECK(v.components == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("embed_object averages over the tokens it can find") {
  auto store = tiny_store();
  const Vector v = embed_object("shiny table", *store);
  CHECK(v.components == std::vector<double>{3.0, 2.0, 1.0});
}

TEST_CASE("embed_object rejects unknown labels") {
  auto store = tiny_store();
  CHECK(code_of([&] { embed_object("zxqv", *store); }) == Errc::out_of_vocabulary);
  CHECK(code_of([&] { embed_object("", *store); }) == Errc::invalid_input);
}

TEST_CASE("file store loads the GloVe text convention") {
  const auto store =
      FileEmbeddingStore::load(testing::fixtures_dir() / "vectors5d.txt");
  CHECK(store->dimension() == 5);
  CHECK(store->contains_token("person"));
  CHECK_FALSE(store->contains_token("woozle"));
}

TEST_CASE("file store rejects malformed lines with their line number") {
  const auto dir = std::filesystem::temp_directory_path() / "caos_sim_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "bad.txt";
  {
    std::ofstream out(path);
    out << "dog 1.0 2.0\n";
    out << "cat 1.0\n";  // dimension mismatch on line 2
  }
  try {
    FileEmbeddingStore::load(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse);
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("max_similarity over pools") {
  auto store = tiny_store();

  SUBCASE("identical embedding gives 1.0") {
    const auto result = max_similarity("dog", {"twin"}, *store);
    CHECK(result.value == doctest::Approx(1.0));
    CHECK(result.skipped == 0);
  }

  SUBCASE("empty pool is an error") {
    CHECK(code_of([&] { max_similarity("dog", {}, *store); }) == Errc::empty_pool);
  }

  SUBCASE("matches an exhaustive scan over a 5-label pool") {
    const std::set<ObjectLabel> pool{"dog", "cat", "table", "dining table", "twin"};
    double brute = -2.0;
    const Vector target = embed_object("dining", *store);
    for (const auto& member : pool) {
      brute = std::max(brute, cosine_similarity(target, embed_object(member, *store)));
    }
    const auto result = max_similarity("dining", pool, *store);
    CHECK(result.value == doctest::Approx(brute).epsilon(1e-12));
  }

  SUBCASE("OOV pool members are skipped and tallied") {
    const auto result = max_similarity("dog", {"cat", "zxqv", "unseen thing"}, *store);
    CHECK(result.skipped == 2);
    CHECK(result.value == doctest::Approx(0.0));
  }

  SUBCASE("fully skipped pool is an empty-pool error") {
    CHECK(code_of([&] { max_similarity("dog", {"zxqv", "qqq"}, *store); }) ==
          Errc::empty_pool);
  }

  SUBCASE("OOV target propagates") {
    CHECK(code_of([&] { max_similarity("zxqv", {"dog"}, *store); }) ==
          Errc::out_of_vocabulary);
  }

  SUBCASE("monotone under pool growth") {
    const std::set<ObjectLabel> small{"cat", "table"};
    const std::set<ObjectLabel> large{"cat", "table", "twin", "dining table"};
    CHECK(max_similarity("dog", small, *store).value <=
          max_similarity("dog", large, *store).value);
  }
}

TEST_CASE("endpoint store caches fetched vectors and persists them") {
  const auto dir = std::filesystem::temp_directory_path() / "caos_embed_cache";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto cache = dir / "cache.jsonl";

  int fetches = 0;
  auto fetch = [&fetches](const std::vector<std::string>& texts) {
    ++fetches;
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) {
      out.push_back({static_cast<double>(t.size()), 1.0, 0.0});
    }
    return out;
  };

  {
    EndpointEmbeddingStore store("remote", fetch, cache);
    const Vector a = store.embed("laptop");
    CHECK(a.components[0] == 6.0);
    const Vector b = store.embed("laptop");
    CHECK(b.components == a.components);
    CHECK(fetches == 1);
    CHECK(store.cache_hits() == 1);
    CHECK(store.cache_misses() == 1);
    store.embed("surfboard");
    CHECK(fetches == 2);
  }

  // a fresh store on the same cache file serves both labels offline
  EndpointEmbeddingStore offline("remote", nullptr, cache);
  CHECK(offline.embed("laptop").components[0] == 6.0);
  CHECK(offline.embed("surfboard").components[0] == 9.0);
  CHECK(offline.dimension() == 3);
  try {
    offline.embed("never-fetched");
    FAIL("expected out-of-vocabulary");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::out_of_vocabulary);
  }
}
