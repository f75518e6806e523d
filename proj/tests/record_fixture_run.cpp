// Helper for the CLI smoke test: runs the fixture world once in record mode
// so the CLI can replay it offline. Usage: caos_record_fixture <workdir>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <spdlog/spdlog.h>

#include "caos/pipeline.hpp"
#include "support/fixture_world.hpp"

using namespace caos;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <workdir>\n", argv[0]);
    return 2;
  }
  spdlog::set_level(spdlog::level::err);
  const fs::path workdir = argv[1];
  fs::create_directories(workdir);

  const auto config = testing::make_fixture_config(workdir / "seed_out",
                                                   workdir / "cache",
                                                   GatewayMode::record);
  auto transport = testing::make_fixture_transport();
  run_evaluation(config, transport);

  // also record a probing pass so `pope` can replay offline; the scripted
  // captioner answers questions with caption text, which normalizes to "no"
  {
    const auto vocab = Vocabulary::load(config.vocabulary);
    const auto freq = FrequencyTable::load(config.frequency, vocab);
    const auto cooc = CoOccurrenceTable::load(config.cooccurrence, vocab);
    const auto dataset = load_dataset(config.dataset, vocab);
    std::vector<PopeInstance> instances;
    for (const auto& d : dataset) instances.push_back({d.image, d.ground_truth});
    auto transcripts = std::make_shared<TranscriptStore>(
        workdir / "cache" / "transcripts.jsonl");
    GatewayOptions options;
    options.mode = GatewayMode::record;
    Gateway gateway(options, transport, transcripts);
    pope_evaluate(instances, gateway, config.endpoint(config.captioner),
                  NegativeSampling::random, 6, config.seed, vocab, &freq, &cooc);
  }

  // write a config file the CLI can consume, with absolute paths
  nlohmann::json doc;
  doc["dataset"] = (testing::fixtures_dir() / "dataset10.jsonl").string();
  doc["vocabulary"] = (testing::fixtures_dir() / "vocab.txt").string();
  doc["frequency"] = (testing::fixtures_dir() / "freq.tsv").string();
  doc["cooccurrence"] = (testing::fixtures_dir() / "cooc.tsv").string();
  doc["embedding_stores"] = nlohmann::json::array(
      {{{"name", "fixture-5d"},
        {"kind", "file"},
        {"path", (testing::fixtures_dir() / "vectors5d.txt").string()}}});
  doc["embedding_store"] = "fixture-5d";
  nlohmann::json endpoints = nlohmann::json::array();
  auto endpoint = [](const std::string& name, const std::string& role) {
    return nlohmann::json{{"name", name},
                          {"base_url", "http://fixture.invalid"},
                          {"role", role},
                          {"timeout_s", 5.0},
                          {"max_retries", 1},
                          {"max_concurrency", 4}};
  };
  endpoints.push_back(endpoint("captioner-mock", "captioner"));
  endpoints.push_back(endpoint("extractor-mock", "extractor"));
  for (int i = 1; i <= 4; ++i) {
    endpoints.push_back(endpoint("oracle-m" + std::to_string(i), "oracle-member"));
  }
  doc["endpoints"] = std::move(endpoints);
  doc["captioner"] = "captioner-mock";
  doc["extractor"] = "extractor-mock";
  doc["oracle_members"] = {"oracle-m1", "oracle-m2", "oracle-m3", "oracle-m4"};
  doc["instruction_file"] = (testing::data_dir() / "instructions.json").string();
  doc["instruction_ids"] = {1, 2};
  doc["prompt_file"] = (testing::data_dir() / "extraction_prompt.json").string();
  doc["model_name"] = "fixture-model";
  doc["k"] = 3;
  doc["seed"] = 7;
  doc["concurrency"] = 2;
  doc["cache_dir"] = (workdir / "cache").string();
  doc["mode"] = "replay";
  doc["out_dir"] = (workdir / "out").string();

  std::ofstream out(workdir / "config.json");
  out << doc.dump(2) << "\n";
  std::printf("recorded fixture run under %s\n", workdir.string().c_str());
  return 0;
}
