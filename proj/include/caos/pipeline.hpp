#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "caos/engine.hpp"
#include "caos/extraction.hpp"
#include "caos/gateway.hpp"
#include "caos/lexicon.hpp"
#include "caos/oracle.hpp"
#include "caos/similarity.hpp"

namespace caos {

/// One evaluated image: locator plus canonicalized ground-truth labels.
struct DatasetInstance {
  ImageRef image;
  std::set<ObjectLabel> ground_truth;
};

/// Dataset file: one JSON object per line with image_id, image locator and
/// ground-truth labels. Labels are canonicalized through the vocabulary;
/// unknown labels and duplicate image ids are load errors. Instances come
/// back sorted by image id.
std::vector<DatasetInstance> load_dataset(const std::filesystem::path& path,
                                          const Vocabulary& vocab);

/// Caption-generation instructions, shipped as a versioned file and selected
/// by id.
struct InstructionSet {
  std::string version;
  std::map<int, std::string> instructions;

  static InstructionSet load(const std::filesystem::path& path);
  const std::string& require(int id) const;
};

struct EmbeddingStoreConfig {
  std::string name;
  enum class Kind { file, endpoint } kind = Kind::file;
  std::filesystem::path path;  // file-backed
  std::string endpoint;        // endpoint-backed: embedder endpoint name
};

struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path vocabulary;
  std::filesystem::path frequency;
  std::filesystem::path cooccurrence;  // optional
  std::vector<EmbeddingStoreConfig> stores;
  std::string active_store;  // name of the store used for scoring
  std::vector<EndpointDescriptor> endpoints;
  std::string captioner;  // endpoint name; empty when captions are ingested
  std::string extractor;  // endpoint name; empty disables LLM augmentation
  std::vector<std::string> oracle_members;
  std::filesystem::path captions_file;  // optional ingest
  std::filesystem::path instruction_file;
  std::vector<int> instruction_ids;
  std::filesystem::path prompt_file;  // required when extractor is set
  std::string model_name = "model";
  int k = 3;
  std::uint32_t seed = 0;
  int concurrency = 1;
  std::filesystem::path cache_dir;
  GatewayMode mode = GatewayMode::live;
  std::filesystem::path out_dir;
  Decoding decoding;

  static RunConfig load(const std::filesystem::path& path);
  const EndpointDescriptor& endpoint(const std::string& name) const;

  /// Canonical hash over the parsed fields; used when the config was built
  /// programmatically rather than loaded from a file.
  std::string fingerprint() const;

  /// SHA-256 of the raw config file bytes (set by load()).
  std::string config_hash;
};

struct RunManifest {
  std::string config_hash;
  std::string dataset_hash;
  std::vector<std::string> endpoint_names;
  std::string prompt_version;
  std::string presence_template_version;
  std::string store_name;
  std::string model_name;
  int k = 0;
  std::uint32_t seed = 0;
  std::string mode;
  std::int64_t started_ms = 0;
  std::int64_t finished_ms = 0;
  std::uint64_t gateway_calls = 0;
  std::uint64_t transcript_hits = 0;
  std::uint64_t verdict_cache_hits = 0;
  std::uint64_t verdict_cache_misses = 0;
  std::uint64_t embedding_cache_hits = 0;
  std::uint64_t embedding_cache_misses = 0;
  int captions_total = 0;
  int captions_resumed = 0;
  int captions_failed = 0;

  nlohmann::json to_json() const;
};

struct RunOutcome {
  RunManifest manifest;
  RunReport report;
  std::vector<CaptionRecord> records;
  bool failed = false;  // more than 10% of captions failed
};

/// Runs the full evaluation: caption -> parse -> extract+filter -> merge ->
/// label -> score, fanned out over a bounded worker pool, with append-only
/// persistence keyed by (image id, instruction id) so interrupted runs
/// resume where they stopped. Writes records, report files and the manifest
/// under config.out_dir.
RunOutcome run_evaluation(const RunConfig& config,
                          std::shared_ptr<ChatTransport> transport = nullptr);

/// Caption generation only; writes a captions JSONL usable via
/// config.captions_file.
void run_caption_generation(const RunConfig& config,
                            std::shared_ptr<ChatTransport> transport = nullptr);

enum class ReportFormat { summary, per_caption, sweep, subsets, instruction_variability };

ReportFormat report_format_from_name(const std::string& name);

struct ReportContext {
  const std::vector<CaptionRecord>* records = nullptr;
  const FrequencyTable* freq = nullptr;
  const CoOccurrenceTable* cooc = nullptr;
  const EmbeddingStore* store = nullptr;
  std::string model_name;
  int k = 3;
  std::vector<int> sweep_range;  // defaults to 1..10 capped at vocabulary size
};

/// Writes one report file per requested format into out_dir and returns the
/// written paths. All tabular outputs carry a header row and fixed column
/// order; floats are formatted with six decimals so outputs are
/// byte-reproducible.
std::vector<std::filesystem::path> emit_report(const ReportContext& ctx,
                                               const std::vector<ReportFormat>& formats,
                                               const std::filesystem::path& out_dir);

/// Canonical JSON bytes of a run report (no timestamps, no absolute paths).
std::string render_summary(const RunReport& report, const std::string& model_name,
                           const std::string& store_name);

/// Long-format table: one row per model x instruction x metric ("all" rows
/// carry the dataset-level aggregates).
std::string render_summary_table(const RunReport& report,
                                 const std::string& model_name);

std::vector<CaptionRecord> load_records(const std::filesystem::path& path);

/// Converts a COCO instance-annotation file (images + annotations +
/// categories) into the dataset JSONL format.
void convert_coco(const std::filesystem::path& coco_json,
                  const std::filesystem::path& out_jsonl,
                  const std::string& image_root);

std::string file_sha256(const std::filesystem::path& path);

}  // namespace caos
