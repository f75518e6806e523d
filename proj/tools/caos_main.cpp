#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "caos/engine.hpp"
#include "caos/pipeline.hpp"

using namespace caos;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailed = 1;
constexpr int kExitConfigError = 2;

struct GlobalFlags {
  std::string config_path;
  std::string mode;
  int concurrency = 0;
  unsigned seed = 0;
  bool seed_set = false;
  std::string cache_dir;
  std::string out_dir;
};

RunConfig load_config(const GlobalFlags& flags) {
  if (flags.config_path.empty()) {
    throw Error(Errc::config, "--config is required");
  }
  RunConfig config = RunConfig::load(flags.config_path);
  if (!flags.mode.empty()) config.mode = gateway_mode_from_name(flags.mode);
  if (flags.concurrency > 0) config.concurrency = flags.concurrency;
  if (flags.seed_set) config.seed = flags.seed;
  if (!flags.cache_dir.empty()) config.cache_dir = flags.cache_dir;
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  return config;
}

struct LoadedTables {
  Vocabulary vocab;
  FrequencyTable freq;
  std::optional<CoOccurrenceTable> cooc;
  std::vector<CaptionRecord> records;
  std::shared_ptr<EmbeddingStore> store;
};

LoadedTables load_tables(const RunConfig& config, bool need_store) {
  LoadedTables t{Vocabulary::load(config.vocabulary),
                 FrequencyTable{},
                 {},
                 {},
                 nullptr};
  t.freq = FrequencyTable::load(config.frequency, t.vocab);
  if (!config.cooccurrence.empty()) {
    t.cooc = CoOccurrenceTable::load(config.cooccurrence, t.vocab);
  }
  t.records = load_records(config.out_dir / "records.jsonl");
  if (t.records.empty()) {
    throw Error(Errc::config, "no records found under " + config.out_dir.string() +
                                  "; run `caos score` first");
  }
  if (need_store) {
    for (const auto& store : config.stores) {
      if (store.name != config.active_store) continue;
      if (store.kind == EmbeddingStoreConfig::Kind::file) {
        t.store = FileEmbeddingStore::load(store.path, store.name);
      } else {
        // offline: serve embeddings from the cache written by the run
        t.store = std::make_shared<EndpointEmbeddingStore>(
            store.name, nullptr, config.cache_dir / "embeddings.jsonl");
      }
    }
    if (!t.store) {
      throw Error(Errc::config, "embedding_store '" + config.active_store +
                                    "' is not configured");
    }
  }
  return t;
}

int cmd_score(const GlobalFlags& flags) {
  const RunConfig config = load_config(flags);
  const RunOutcome outcome = run_evaluation(config);
  std::printf("%s\n",
              render_summary(outcome.report, config.model_name,
                             outcome.manifest.store_name)
                  .c_str());
  std::printf("wrote %s\n", (config.out_dir / "summary.json").string().c_str());
  return outcome.failed ? kExitRunFailed : kExitOk;
}

int cmd_caption(const GlobalFlags& flags) {
  const RunConfig config = load_config(flags);
  run_caption_generation(config);
  std::printf("wrote %s\n", (config.out_dir / "captions.jsonl").string().c_str());
  return kExitOk;
}

int cmd_sweep(const GlobalFlags& flags, int k_min, int k_max) {
  const RunConfig config = load_config(flags);
  const LoadedTables t = load_tables(config, true);
  ReportContext ctx;
  ctx.records = &t.records;
  ctx.freq = &t.freq;
  ctx.store = t.store.get();
  ctx.model_name = config.model_name;
  ctx.k = config.k;
  for (int k = k_min; k <= k_max; ++k) ctx.sweep_range.push_back(k);
  const auto written = emit_report(ctx, {ReportFormat::sweep}, config.out_dir);
  std::printf("wrote %s\n", written.front().string().c_str());
  return kExitOk;
}

int cmd_subsets(const GlobalFlags& flags) {
  const RunConfig config = load_config(flags);
  const LoadedTables t = load_tables(config, false);
  ReportContext ctx;
  ctx.records = &t.records;
  ctx.freq = &t.freq;
  ctx.model_name = config.model_name;
  ctx.k = config.k;
  const auto written = emit_report(ctx, {ReportFormat::subsets}, config.out_dir);
  std::printf("wrote %s\n", written.front().string().c_str());
  return kExitOk;
}

int cmd_report(const GlobalFlags& flags, const std::vector<std::string>& formats) {
  const RunConfig config = load_config(flags);
  const LoadedTables t = load_tables(config, true);
  ReportContext ctx;
  ctx.records = &t.records;
  ctx.freq = &t.freq;
  ctx.cooc = t.cooc ? &*t.cooc : nullptr;
  ctx.store = t.store.get();
  ctx.model_name = config.model_name;
  ctx.k = config.k;
  std::vector<ReportFormat> parsed;
  for (const auto& f : formats) parsed.push_back(report_format_from_name(f));
  for (const auto& path : emit_report(ctx, parsed, config.out_dir)) {
    std::printf("wrote %s\n", path.string().c_str());
  }
  return kExitOk;
}

int cmd_pope(const GlobalFlags& flags, const std::string& sampling,
             int questions_per_image) {
  const RunConfig config = load_config(flags);
  const Vocabulary vocab = Vocabulary::load(config.vocabulary);
  const FrequencyTable freq = FrequencyTable::load(config.frequency, vocab);
  std::optional<CoOccurrenceTable> cooc;
  if (!config.cooccurrence.empty()) {
    cooc = CoOccurrenceTable::load(config.cooccurrence, vocab);
  }
  const auto dataset = load_dataset(config.dataset, vocab);
  std::vector<PopeInstance> instances;
  for (const auto& d : dataset) instances.push_back({d.image, d.ground_truth});

  std::shared_ptr<TranscriptStore> transcripts;
  if (config.mode != GatewayMode::live) {
    std::filesystem::create_directories(config.cache_dir);
    transcripts =
        std::make_shared<TranscriptStore>(config.cache_dir / "transcripts.jsonl");
  }
  GatewayOptions options;
  options.mode = config.mode;
  Gateway gateway(options, make_http_transport(), transcripts);

  const PopeResult result = pope_evaluate(
      instances, gateway, config.endpoint(config.captioner),
      negative_sampling_from_name(sampling), questions_per_image, config.seed,
      vocab, &freq, cooc ? &*cooc : nullptr);

  nlohmann::json summary{{"sampling", sampling},
                         {"questions", result.questions},
                         {"yes_answers", result.yes_answers},
                         {"accuracy", result.accuracy},
                         {"precision", result.precision},
                         {"recall", result.recall},
                         {"f1", result.f1}};
  std::filesystem::create_directories(config.out_dir);
  std::ofstream out(config.out_dir / "pope.json");
  out << summary.dump(2) << "\n";
  std::printf("%s\n", summary.dump(2).c_str());
  return kExitOk;
}

int cmd_convert_coco(const std::string& in_path, const std::string& out_path,
                     const std::string& image_root) {
  convert_coco(in_path, out_path, image_root);
  std::printf("wrote %s\n", out_path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-hallucination evaluation for vision-language models"};
  app.require_subcommand(1);
  app.fallthrough(true);

  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "Run configuration file (JSON)");
  app.add_option("--mode", flags.mode, "Gateway mode: live, record or replay");
  app.add_option("--concurrency", flags.concurrency, "Worker pool size");
  auto* seed_opt = app.add_option("--seed", flags.seed, "Sampling seed");
  app.add_option("--cache-dir", flags.cache_dir, "Cache directory override");
  app.add_option("--out", flags.out_dir, "Output directory override");

  auto* caption = app.add_subcommand("caption", "Generate captions only");
  auto* score = app.add_subcommand(
      "score", "Run the full evaluation (or score ingested captions)");

  int k_min = 1, k_max = 10;
  auto* sweep = app.add_subcommand("sweep-k", "Top-k frequency sweep over saved records");
  sweep->add_option("--k-min", k_min, "Smallest k")->check(CLI::PositiveNumber);
  sweep->add_option("--k-max", k_max, "Largest k")->check(CLI::PositiveNumber);

  auto* subsets =
      app.add_subcommand("subsets", "Subset score breakdown over saved records");

  std::string sampling = "random";
  int questions_per_image = 6;
  auto* pope = app.add_subcommand("pope", "Binary presence probing of a model");
  pope->add_option("--sampling", sampling,
                   "Negative sampling: random, popular or adversarial");
  pope->add_option("--questions-per-image", questions_per_image,
                   "Questions per image (half positive, half negative)");

  std::vector<std::string> formats{"summary"};
  auto* report = app.add_subcommand("report", "Re-emit report files from saved records");
  report->add_option("--format", formats,
                     "summary, per-caption, sweep, subsets, instruction-variability");

  std::string coco_in, coco_out, image_root;
  auto* convert = app.add_subcommand("convert-coco",
                                     "Convert COCO instance annotations to the dataset format");
  convert->add_option("input", coco_in, "COCO instances JSON")->required();
  convert->add_option("output", coco_out, "Dataset JSONL to write")->required();
  convert->add_option("--image-root", image_root, "Prefix for image paths");

  CLI11_PARSE(app, argc, argv);
  flags.seed_set = seed_opt->count() > 0;

  try {
    if (*caption) return cmd_caption(flags);
    if (*score) return cmd_score(flags);
    if (*sweep) return cmd_sweep(flags, k_min, k_max);
    if (*subsets) return cmd_subsets(flags);
    if (*pope) return cmd_pope(flags, sampling, questions_per_image);
    if (*report) return cmd_report(flags, formats);
    if (*convert) return cmd_convert_coco(coco_in, coco_out, image_root);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (e.code() == Errc::config || e.code() == Errc::parse ||
        e.code() == Errc::invalid_input) {
      return kExitConfigError;
    }
    return kExitRunFailed;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRunFailed;
  }
  return kExitConfigError;
}
