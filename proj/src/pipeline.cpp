#include "caos/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "caos/text.hpp"

namespace caos {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

json parse_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, std::string(what) + " not found: " + path.string());
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw Error(Errc::parse, std::string(what) + " is not valid JSON: " + path.string());
  }
  return doc;
}

std::string fmt_double(double v) { return fmt::format("{:.12f}", v); }

std::string fmt_optional(const std::optional<double>& v) {
  return v ? fmt_double(*v) : "null";
}

}  // namespace

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::config, "file not found: " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::vector<DatasetInstance> load_dataset(const std::filesystem::path& path,
                                          const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config, "dataset file not found: " + path.string());
  }
  std::vector<DatasetInstance> instances;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": not valid JSON");
    }
    DatasetInstance instance;
    try {
      instance.image.id = rec.at("image_id").get<std::string>();
      instance.image.locator = rec.at("image").get<std::string>();
      for (const auto& raw : rec.at("labels")) {
        const std::string label = raw.get<std::string>();
        auto canonical = vocab.canonicalize(label);
        if (!canonical) {
          throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                       ": ground-truth label '" + label +
                                       "' not in vocabulary");
        }
        instance.ground_truth.insert(*canonical);
      }
    } catch (const json::exception& e) {
      throw Error(Errc::parse,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(instance.image.id).second) {
      throw Error(Errc::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": duplicate image id '" + instance.image.id + "'");
    }
    instances.push_back(std::move(instance));
  }
  if (instances.empty()) {
    throw Error(Errc::parse, "dataset file is empty: " + path.string());
  }
  std::sort(instances.begin(), instances.end(),
            [](const DatasetInstance& a, const DatasetInstance& b) {
              return a.image.id < b.image.id;
            });
  return instances;
}

InstructionSet InstructionSet::load(const std::filesystem::path& path) {
  const json doc = parse_json_file(path, "instruction file");
  InstructionSet set;
  try {
    set.version = doc.at("version").get<std::string>();
    for (const auto& item : doc.at("instructions")) {
      const int id = item.at("id").get<int>();
      if (!set.instructions.emplace(id, item.at("text").get<std::string>()).second) {
        throw Error(Errc::parse, path.string() + ": duplicate instruction id " +
                                     std::to_string(id));
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
  if (set.instructions.empty()) {
    throw Error(Errc::parse, "instruction file has no instructions: " + path.string());
  }
  return set;
}

const std::string& InstructionSet::require(int id) const {
  auto it = instructions.find(id);
  if (it == instructions.end()) {
    throw Error(Errc::config, "instruction id " + std::to_string(id) +
                                  " not in instruction file");
  }
  return it->second;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const json doc = parse_json_file(path, "config file");
  RunConfig cfg;
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  try {
    cfg.dataset = resolve(doc.at("dataset").get<std::string>());
    cfg.vocabulary = resolve(doc.at("vocabulary").get<std::string>());
    cfg.frequency = resolve(doc.at("frequency").get<std::string>());
    cfg.cooccurrence = resolve(doc.value("cooccurrence", ""));
    for (const auto& s : doc.at("embedding_stores")) {
      EmbeddingStoreConfig store;
      store.name = s.at("name").get<std::string>();
      const std::string kind = s.at("kind").get<std::string>();
      if (kind == "file") {
        store.kind = EmbeddingStoreConfig::Kind::file;
        store.path = resolve(s.at("path").get<std::string>());
      } else if (kind == "endpoint") {
        store.kind = EmbeddingStoreConfig::Kind::endpoint;
        store.endpoint = s.at("endpoint").get<std::string>();
      } else {
        throw Error(Errc::config, "embedding store '" + store.name +
                                      "': unknown kind '" + kind + "'");
      }
      cfg.stores.push_back(std::move(store));
    }
    cfg.active_store = doc.at("embedding_store").get<std::string>();
    if (doc.contains("endpoints")) {
      for (const auto& e : doc.at("endpoints")) {
        EndpointDescriptor d;
        d.name = e.at("name").get<std::string>();
        d.base_url = e.value("base_url", "");
        d.auth_env = e.value("auth_env", "");
        d.role = endpoint_role_from_name(e.at("role").get<std::string>());
        d.timeout_s = e.value("timeout_s", 30.0);
        d.max_retries = e.value("max_retries", 2);
        d.max_concurrency = e.value("max_concurrency", 4);
        d.requests_per_second = e.value("requests_per_second", 0.0);
        d.validate();
        cfg.endpoints.push_back(std::move(d));
      }
    }
    cfg.captioner = doc.value("captioner", "");
    cfg.extractor = doc.value("extractor", "");
    if (doc.contains("oracle_members")) {
      cfg.oracle_members = doc.at("oracle_members").get<std::vector<std::string>>();
    }
    cfg.captions_file = resolve(doc.value("captions_file", ""));
    cfg.instruction_file = resolve(doc.at("instruction_file").get<std::string>());
    cfg.instruction_ids = doc.at("instruction_ids").get<std::vector<int>>();
    cfg.prompt_file = resolve(doc.value("prompt_file", ""));
    cfg.model_name = doc.value("model_name", std::string("model"));
    cfg.k = doc.value("k", 3);
    cfg.seed = doc.value("seed", 0u);
    cfg.concurrency = doc.value("concurrency", 1);
    cfg.cache_dir = resolve(doc.value("cache_dir", ".caos-cache"));
    cfg.mode = gateway_mode_from_name(doc.value("mode", "live"));
    cfg.out_dir = resolve(doc.value("out_dir", "out"));
    if (doc.contains("decoding")) {
      const auto& d = doc.at("decoding");
      cfg.decoding.temperature = d.value("temperature", 0.0);
      cfg.decoding.max_tokens = d.value("max_tokens", 256);
      cfg.decoding.seed = d.value("seed", 0ull);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::config, path.string() + ": " + e.what());
  }
  cfg.config_hash = file_sha256(path);
  return cfg;
}

const EndpointDescriptor& RunConfig::endpoint(const std::string& name) const {
  for (const auto& e : endpoints) {
    if (e.name == name) return e;
  }
  throw Error(Errc::config, "endpoint '" + name + "' not defined in config");
}

std::string RunConfig::fingerprint() const {
  json j;
  j["dataset"] = dataset.string();
  j["vocabulary"] = vocabulary.string();
  j["frequency"] = frequency.string();
  j["cooccurrence"] = cooccurrence.string();
  json stores_json = json::array();
  for (const auto& s : stores) {
    stores_json.push_back(json{{"name", s.name},
                               {"kind", s.kind == EmbeddingStoreConfig::Kind::file
                                            ? "file"
                                            : "endpoint"},
                               {"path", s.path.string()},
                               {"endpoint", s.endpoint}});
  }
  j["stores"] = std::move(stores_json);
  j["embedding_store"] = active_store;
  json endpoints_json = json::array();
  for (const auto& e : endpoints) {
    endpoints_json.push_back(json{{"name", e.name},
                                  {"base_url", e.base_url},
                                  {"role", endpoint_role_name(e.role)}});
  }
  j["endpoints"] = std::move(endpoints_json);
  j["captioner"] = captioner;
  j["extractor"] = extractor;
  j["oracle_members"] = oracle_members;
  j["captions_file"] = captions_file.string();
  j["instruction_file"] = instruction_file.string();
  j["instruction_ids"] = instruction_ids;
  j["prompt_file"] = prompt_file.string();
  j["model_name"] = model_name;
  j["k"] = k;
  j["seed"] = seed;
  j["mode"] = gateway_mode_name(mode);
  return sha256_hex(j.dump());
}

json RunManifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["dataset_hash"] = dataset_hash;
  j["endpoints"] = endpoint_names;
  j["prompt_version"] = prompt_version;
  j["presence_template_version"] = presence_template_version;
  j["embedding_store"] = store_name;
  j["model_name"] = model_name;
  j["k"] = k;
  j["seed"] = seed;
  j["mode"] = mode;
  j["started_ms"] = started_ms;
  j["finished_ms"] = finished_ms;
  j["gateway_calls"] = gateway_calls;
  j["transcript_hits"] = transcript_hits;
  j["verdict_cache"] = json{{"hits", verdict_cache_hits}, {"misses", verdict_cache_misses}};
  j["embedding_cache"] =
      json{{"hits", embedding_cache_hits}, {"misses", embedding_cache_misses}};
  j["captions"] = json{{"total", captions_total},
                       {"resumed", captions_resumed},
                       {"failed", captions_failed}};
  return j;
}

std::vector<CaptionRecord> load_records(const std::filesystem::path& path) {
  std::vector<CaptionRecord> records;
  std::ifstream in(path);
  if (!in) return records;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) continue;
    records.push_back(CaptionRecord::from_json(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Run orchestration

namespace {

/// Everything loaded and validated before the gateway exists; construction
/// failures abort the run without side effects.
struct LoadedRun {
  Vocabulary vocab;
  FrequencyTable freq;
  std::optional<CoOccurrenceTable> cooc;
  std::vector<DatasetInstance> instances;
  InstructionSet instructions;
  std::optional<ExtractionPrompt> prompt;
  std::vector<ObjectLabel> top_k_labels;
  std::map<std::pair<std::string, int>, std::string> ingested_captions;
  const EmbeddingStoreConfig* store_config = nullptr;
};

LoadedRun load_inputs(const RunConfig& config) {
  LoadedRun run{.vocab = Vocabulary::load(config.vocabulary),
                .freq = {},
                .cooc = {},
                .instances = {},
                .instructions = {},
                .prompt = {},
                .top_k_labels = {},
                .ingested_captions = {},
                .store_config = nullptr};
  run.freq = FrequencyTable::load(config.frequency, run.vocab);
  if (!config.cooccurrence.empty()) {
    run.cooc = CoOccurrenceTable::load(config.cooccurrence, run.vocab);
  }
  run.instances = load_dataset(config.dataset, run.vocab);
  run.instructions = InstructionSet::load(config.instruction_file);
  for (int id : config.instruction_ids) run.instructions.require(id);
  if (config.instruction_ids.empty()) {
    throw Error(Errc::config, "no instruction ids selected");
  }
  if (config.k < 1 || static_cast<std::size_t>(config.k) > run.freq.size()) {
    throw Error(Errc::config, "k=" + std::to_string(config.k) +
                                  " outside [1, " + std::to_string(run.freq.size()) + "]");
  }
  run.top_k_labels = run.freq.top_k(static_cast<std::size_t>(config.k));

  if (!config.extractor.empty()) {
    if (config.prompt_file.empty()) {
      throw Error(Errc::config, "extractor endpoint set but no prompt_file configured");
    }
    run.prompt = ExtractionPrompt::load(config.prompt_file);
  }

  for (const auto& store : config.stores) {
    if (store.name == config.active_store) run.store_config = &store;
  }
  if (run.store_config == nullptr) {
    throw Error(Errc::config, "embedding_store '" + config.active_store +
                                  "' is not among the configured stores");
  }
  if (run.store_config->kind == EmbeddingStoreConfig::Kind::endpoint) {
    config.endpoint(run.store_config->endpoint);  // must exist
  }

  if (!config.captions_file.empty()) {
    std::ifstream in(config.captions_file);
    if (!in) {
      throw Error(Errc::config,
                  "captions file not found: " + config.captions_file.string());
    }
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded()) {
        throw Error(Errc::parse, "captions file has a malformed line: " +
                                     config.captions_file.string());
      }
      run.ingested_captions[{rec.at("image_id").get<std::string>(),
                             rec.at("instruction_id").get<int>()}] =
          rec.at("caption").get<std::string>();
    }
  } else if (config.captioner.empty()) {
    throw Error(Errc::config, "neither a captioner endpoint nor a captions file is configured");
  }
  if (!config.captioner.empty()) config.endpoint(config.captioner);
  if (!config.extractor.empty()) config.endpoint(config.extractor);
  for (const auto& member : config.oracle_members) config.endpoint(member);
  return run;
}

std::shared_ptr<EmbeddingStore> open_store(const RunConfig& config,
                                           const LoadedRun& run, Gateway* gateway) {
  if (run.store_config->kind == EmbeddingStoreConfig::Kind::file) {
    return FileEmbeddingStore::load(run.store_config->path, run.store_config->name);
  }
  const EndpointDescriptor endpoint = config.endpoint(run.store_config->endpoint);
  EndpointEmbeddingStore::FetchFn fetch;
  if (gateway != nullptr) {
    fetch = [gateway, endpoint](const std::vector<std::string>& texts) {
      return gateway->embed_texts(endpoint, texts);
    };
  }
  return std::make_shared<EndpointEmbeddingStore>(
      run.store_config->name, std::move(fetch),
      config.cache_dir / "embeddings.jsonl");
}

struct RecordSink {
  explicit RecordSink(const std::filesystem::path& path) {
    // a crash can leave a partial final line; keep appends on fresh lines
    bool needs_newline = false;
    {
      std::ifstream in(path, std::ios::binary);
      if (in) {
        in.seekg(0, std::ios::end);
        if (in.tellg() > 0) {
          in.seekg(-1, std::ios::end);
          needs_newline = in.get() != '\n';
        }
      }
    }
    out.open(path, std::ios::app);
    if (needs_newline) out << "\n";
  }
  void append(const CaptionRecord& record) {
    std::lock_guard lock(mutex);
    out << record.to_json().dump() << "\n";
    out.flush();
  }
  std::mutex mutex;
  std::ofstream out;
};

struct FailureSink {
  explicit FailureSink(const std::filesystem::path& path) : path_(path) {}
  void append(const std::string& image_id, int instruction_id, const std::string& error) {
    std::lock_guard lock(mutex);
    std::ofstream out(path_, std::ios::app);
    out << json{{"image_id", image_id},
                {"instruction_id", instruction_id},
                {"error", error}}
               .dump()
        << "\n";
    ++count;
  }
  std::filesystem::path path_;
  std::mutex mutex;
  int count = 0;
};

}  // namespace

RunOutcome run_evaluation(const RunConfig& config,
                          std::shared_ptr<ChatTransport> transport) {
  const std::int64_t started = now_ms();
  LoadedRun run = load_inputs(config);

  // inputs are valid: from here on the run directory may be touched
  std::filesystem::create_directories(config.out_dir);
  std::filesystem::create_directories(config.cache_dir);

  if (!transport) transport = make_http_transport();
  std::shared_ptr<TranscriptStore> transcripts;
  if (config.mode != GatewayMode::live) {
    transcripts = std::make_shared<TranscriptStore>(config.cache_dir / "transcripts.jsonl");
  }
  GatewayOptions gw_options;
  gw_options.mode = config.mode;
  Gateway gateway(gw_options, transport, transcripts);

  auto store = open_store(config, run, &gateway);
  VerdictCache verdicts(config.cache_dir / "verdicts.jsonl");
  std::vector<EndpointDescriptor> members;
  for (const auto& name : config.oracle_members) {
    members.push_back(config.endpoint(name));
  }
  std::optional<OraclePanel> panel;
  if (!members.empty()) panel.emplace(gateway, members, &verdicts);

  const std::filesystem::path records_path = config.out_dir / "records.jsonl";
  std::vector<CaptionRecord> resumed = load_records(records_path);
  std::set<std::pair<std::string, int>> done;
  for (const auto& r : resumed) done.insert({r.image_id, r.instruction_id});

  struct Task {
    const DatasetInstance* instance;
    int instruction_id;
  };
  std::vector<Task> tasks;
  int total_tasks = 0;
  for (const auto& instance : run.instances) {
    for (int id : config.instruction_ids) {
      ++total_tasks;
      if (!done.count({instance.image.id, id})) {
        tasks.push_back(Task{&instance, id});
      }
    }
  }

  RecordSink sink(records_path);
  FailureSink failures(config.out_dir / "failures.jsonl");
  std::vector<std::optional<CaptionRecord>> fresh(tasks.size());

  auto process = [&](const Task& task) -> CaptionRecord {
    const DatasetInstance& instance = *task.instance;
    const std::string& instruction = run.instructions.require(task.instruction_id);

    std::string caption;
    if (!config.captions_file.empty()) {
      auto it = run.ingested_captions.find({instance.image.id, task.instruction_id});
      if (it == run.ingested_captions.end()) {
        throw Error(Errc::invalid_input, "no ingested caption for (" +
                                             instance.image.id + ", " +
                                             std::to_string(task.instruction_id) + ")");
      }
      caption = it->second;
    } else {
      caption = gateway.generate_caption(config.endpoint(config.captioner),
                                         instance.image, instruction, config.decoding);
    }

    auto l1 = parse_in_domain_objects(caption, run.vocab);
    std::vector<ObjectLabel> l2;
    if (run.prompt) {
      auto raw = llm_extract_objects(caption, gateway, config.endpoint(config.extractor),
                                     *run.prompt, config.decoding);
      l2 = verbatim_filter(raw, caption);
    }
    auto mentions = merge_ordered(l1, l2, caption, run.vocab);
    auto labels = label_mentions(mentions, instance.ground_truth,
                                 panel ? &*panel : nullptr, instance.image);

    ScoringInput input;
    input.image_id = instance.image.id;
    input.instruction_id = task.instruction_id;
    input.caption = caption;
    input.mentions = std::move(mentions);
    input.genuine = std::move(labels);
    input.ground_truth = instance.ground_truth;

    CaptionRecord record = caos_for_caption(input, run.top_k_labels, *store);
    auto [precision, recall] =
        precision_recall(record.mentions, record.genuine, input.ground_truth);
    record.precision = precision;
    record.recall = recall;
    return record;
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        CaptionRecord record = process(tasks[i]);
        sink.append(record);
        fresh[i] = std::move(record);
      } catch (const std::exception& e) {
        spdlog::error("caption ({}, {}) failed: {}", tasks[i].instance->image.id,
                      tasks[i].instruction_id, e.what());
        failures.append(tasks[i].instance->image.id, tasks[i].instruction_id, e.what());
      }
    }
  };
  const int workers = std::max(1, std::min<int>(config.concurrency,
                                                static_cast<int>(tasks.size())));
  {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RunOutcome outcome;
  outcome.records = std::move(resumed);
  for (auto& r : fresh) {
    if (r) outcome.records.push_back(std::move(*r));
  }
  if (outcome.records.empty()) {
    throw Error(Errc::gateway, "run produced no caption records");
  }

  outcome.report = aggregate_run(outcome.records);
  outcome.report.failed_captions = failures.count;
  outcome.failed = failures.count * 10 > total_tasks;  // > 10% failures
  outcome.report.run_failed = outcome.failed;
  if (run.cooc) {
    outcome.report.cooc_hallucination_fraction =
        cooccurrence_hallucination_fraction(outcome.records, *run.cooc);
  }
  outcome.report.subsets = {
      subset_scores(outcome.records, SubsetSelector::all(), &run.freq),
      subset_scores(outcome.records, SubsetSelector::in_domain_only(), &run.freq),
      subset_scores(outcome.records, SubsetSelector::out_of_domain_only(), &run.freq),
      subset_scores(outcome.records,
                    SubsetSelector::excluding_top_m(
                        std::min<int>(3, static_cast<int>(run.freq.size()))),
                    &run.freq),
  };

  RunManifest& manifest = outcome.manifest;
  manifest.config_hash =
      config.config_hash.empty() ? config.fingerprint() : config.config_hash;
  manifest.dataset_hash = file_sha256(config.dataset);
  for (const auto& e : config.endpoints) manifest.endpoint_names.push_back(e.name);
  manifest.prompt_version = run.prompt ? run.prompt->version : "";
  manifest.presence_template_version = kPresenceTemplateVersion;
  manifest.store_name = store->name();
  manifest.model_name = config.model_name;
  manifest.k = config.k;
  manifest.seed = config.seed;
  manifest.mode = gateway_mode_name(config.mode);
  manifest.started_ms = started;
  manifest.finished_ms = now_ms();
  manifest.gateway_calls = gateway.network_calls();
  manifest.transcript_hits = gateway.transcript_hits();
  manifest.verdict_cache_hits = verdicts.hits();
  manifest.verdict_cache_misses = verdicts.misses();
  if (auto* endpoint_store = dynamic_cast<EndpointEmbeddingStore*>(store.get())) {
    manifest.embedding_cache_hits = endpoint_store->cache_hits();
    manifest.embedding_cache_misses = endpoint_store->cache_misses();
  }
  manifest.captions_total = total_tasks;
  manifest.captions_resumed = static_cast<int>(done.size());
  manifest.captions_failed = failures.count;

  // report files
  {
    std::ofstream out(config.out_dir / "summary.json", std::ios::binary);
    out << render_summary(outcome.report, config.model_name, store->name());
    std::ofstream table(config.out_dir / "summary.tsv", std::ios::binary);
    table << render_summary_table(outcome.report, config.model_name);
  }
  ReportContext ctx;
  ctx.records = &outcome.records;
  ctx.freq = &run.freq;
  ctx.cooc = run.cooc ? &*run.cooc : nullptr;
  ctx.store = store.get();
  ctx.model_name = config.model_name;
  ctx.k = config.k;
  emit_report(ctx, {ReportFormat::per_caption, ReportFormat::instruction_variability},
              config.out_dir);
  {
    std::ofstream out(config.out_dir / "manifest.json");
    out << manifest.to_json().dump(2) << "\n";
  }
  return outcome;
}

void run_caption_generation(const RunConfig& config,
                            std::shared_ptr<ChatTransport> transport) {
  if (config.captioner.empty()) {
    throw Error(Errc::config, "caption generation requires a captioner endpoint");
  }
  LoadedRun run = load_inputs(config);
  std::filesystem::create_directories(config.out_dir);
  std::filesystem::create_directories(config.cache_dir);

  if (!transport) transport = make_http_transport();
  std::shared_ptr<TranscriptStore> transcripts;
  if (config.mode != GatewayMode::live) {
    transcripts = std::make_shared<TranscriptStore>(config.cache_dir / "transcripts.jsonl");
  }
  GatewayOptions gw_options;
  gw_options.mode = config.mode;
  Gateway gateway(gw_options, transport, transcripts);

  std::ofstream out(config.out_dir / "captions.jsonl", std::ios::binary);
  const EndpointDescriptor captioner = config.endpoint(config.captioner);
  for (const auto& instance : run.instances) {
    for (int id : config.instruction_ids) {
      const std::string caption = gateway.generate_caption(
          captioner, instance.image, run.instructions.require(id), config.decoding);
      out << json{{"image_id", instance.image.id},
                  {"instruction_id", id},
                  {"caption", caption}}
                 .dump()
          << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Reporting

ReportFormat report_format_from_name(const std::string& name) {
  if (name == "summary") return ReportFormat::summary;
  if (name == "per-caption") return ReportFormat::per_caption;
  if (name == "sweep") return ReportFormat::sweep;
  if (name == "subsets") return ReportFormat::subsets;
  if (name == "instruction-variability") return ReportFormat::instruction_variability;
  throw Error(Errc::invalid_input, "unknown report format: '" + name + "'");
}

namespace {

json aggregate_to_json(const AggregateScores& s) {
  auto opt = [](const std::optional<double>& v) -> json {
    if (!v) return nullptr;
    return *v;
  };
  return json{{"caos_t", opt(s.caos_t)},
              {"caos_x", opt(s.caos_x)},
              {"caos_k", opt(s.caos_k)},
              {"caos_t_over_x", opt(s.caos_t_over_x)},
              {"caos_x_over_k", opt(s.caos_x_over_k)},
              {"caos_avg", opt(s.caos_avg)}};
}

std::vector<const CaptionRecord*> sorted_records(const std::vector<CaptionRecord>& records) {
  std::vector<const CaptionRecord*> views;
  views.reserve(records.size());
  for (const auto& r : records) views.push_back(&r);
  std::sort(views.begin(), views.end(),
            [](const CaptionRecord* a, const CaptionRecord* b) {
              if (a->image_id != b->image_id) return a->image_id < b->image_id;
              return a->instruction_id < b->instruction_id;
            });
  return views;
}

}  // namespace

std::string render_summary(const RunReport& report, const std::string& model_name,
                           const std::string& store_name) {
  json j;
  j["model"] = model_name;
  j["embedding_store"] = store_name;
  j["captions"] = json{{"total", report.total_captions},
                       {"scored", report.scored_captions},
                       {"unscored", report.unscored_captions},
                       {"failed", report.failed_captions}};
  j["run_failed"] = report.run_failed;
  j["caos"] = aggregate_to_json(report.scores);
  j["chair_s"] = report.chair_s;
  j["precision"] = report.precision ? json(*report.precision) : json(nullptr);
  j["recall"] = report.recall ? json(*report.recall) : json(nullptr);
  j["objects_per_caption"] = report.objects_per_caption;
  j["k"] = report.k_used;
  j["skips"] = json{{"hallucinated_mentions_dropped", report.skipped_mentions},
                    {"pool_members_skipped", report.pool_oov_skips}};
  j["cooc_hallucination_fraction"] = report.cooc_hallucination_fraction
                                         ? json(*report.cooc_hallucination_fraction)
                                         : json(nullptr);
  json subsets = json::array();
  for (const auto& s : report.subsets) {
    subsets.push_back(json{{"subset", s.name},
                           {"scored_captions", s.scored_captions},
                           {"caos", aggregate_to_json(s.scores)}});
  }
  j["subsets"] = std::move(subsets);
  json instructions = json::array();
  for (const auto& agg : report.per_instruction) {
    instructions.push_back(
        json{{"instruction_id", agg.instruction_id},
             {"captions", agg.captions},
             {"scored", agg.scored_captions},
             {"caos", aggregate_to_json(agg.scores)},
             {"chair_s", agg.chair_s},
             {"precision", agg.precision ? json(*agg.precision) : json(nullptr)},
             {"recall", agg.recall ? json(*agg.recall) : json(nullptr)},
             {"objects_per_caption", agg.objects_per_caption}});
  }
  j["per_instruction"] = std::move(instructions);
  return j.dump(2) + "\n";
}

std::string render_summary_table(const RunReport& report,
                                 const std::string& model_name) {
  std::ostringstream out;
  out << "model\tinstruction\tmetric\tvalue\n";
  auto emit = [&](const std::string& instruction, const std::string& metric,
                  const std::optional<double>& value) {
    out << model_name << "\t" << instruction << "\t" << metric << "\t"
        << fmt_optional(value) << "\n";
  };
  auto emit_block = [&](const std::string& instruction, const AggregateScores& s,
                        double chair, const std::optional<double>& precision,
                        const std::optional<double>& recall, double objects) {
    emit(instruction, "caos_t", s.caos_t);
    emit(instruction, "caos_x", s.caos_x);
    emit(instruction, "caos_k", s.caos_k);
    emit(instruction, "caos_t_over_x", s.caos_t_over_x);
    emit(instruction, "caos_x_over_k", s.caos_x_over_k);
    emit(instruction, "caos_avg", s.caos_avg);
    emit(instruction, "chair_s", chair);
    emit(instruction, "precision", precision);
    emit(instruction, "recall", recall);
    emit(instruction, "objects_per_caption", objects);
  };
  emit_block("all", report.scores, report.chair_s, report.precision, report.recall,
             report.objects_per_caption);
  for (const auto& agg : report.per_instruction) {
    emit_block(std::to_string(agg.instruction_id), agg.scores, agg.chair_s,
               agg.precision, agg.recall, agg.objects_per_caption);
  }
  return out.str();
}

std::vector<std::filesystem::path> emit_report(const ReportContext& ctx,
                                               const std::vector<ReportFormat>& formats,
                                               const std::filesystem::path& out_dir) {
  if (ctx.records == nullptr) {
    throw Error(Errc::invalid_input, "emit_report: no records");
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  for (const ReportFormat format : formats) {
    switch (format) {
      case ReportFormat::summary: {
        RunReport report = aggregate_run(*ctx.records);
        if (ctx.cooc != nullptr) {
          report.cooc_hallucination_fraction =
              cooccurrence_hallucination_fraction(*ctx.records, *ctx.cooc);
        }
        if (ctx.freq != nullptr) {
          report.subsets = {
              subset_scores(*ctx.records, SubsetSelector::all(), ctx.freq),
              subset_scores(*ctx.records, SubsetSelector::in_domain_only(), ctx.freq),
              subset_scores(*ctx.records, SubsetSelector::out_of_domain_only(), ctx.freq),
              subset_scores(*ctx.records,
                            SubsetSelector::excluding_top_m(
                                std::min<int>(3, static_cast<int>(ctx.freq->size()))),
                            ctx.freq),
          };
        }
        const auto path = out_dir / "summary.json";
        std::ofstream out(path, std::ios::binary);
        out << render_summary(report, ctx.model_name,
                              ctx.store ? ctx.store->name() : "");
        written.push_back(path);
        const auto table_path = out_dir / "summary.tsv";
        std::ofstream table(table_path, std::ios::binary);
        table << render_summary_table(report, ctx.model_name);
        written.push_back(table_path);
        break;
      }
      case ReportFormat::per_caption: {
        const auto path = out_dir / "per_caption.jsonl";
        std::ofstream out(path, std::ios::binary);
        for (const CaptionRecord* r : sorted_records(*ctx.records)) {
          out << r->to_json().dump() << "\n";
        }
        written.push_back(path);
        break;
      }
      case ReportFormat::sweep: {
        if (ctx.freq == nullptr || ctx.store == nullptr) {
          throw Error(Errc::invalid_input, "sweep report requires frequency table and store");
        }
        std::vector<int> range = ctx.sweep_range;
        if (range.empty()) {
          for (int k = 1; k <= std::min<int>(10, static_cast<int>(ctx.freq->size())); ++k) {
            range.push_back(k);
          }
        }
        const auto curve = topk_sweep(*ctx.records, *ctx.freq, range, *ctx.store);
        const auto path = out_dir / "sweep.tsv";
        std::ofstream out(path, std::ios::binary);
        out << "model\tk\tcaos_k\n";
        for (const auto& [k, value] : curve) {
          out << ctx.model_name << "\t" << k << "\t" << fmt_optional(value) << "\n";
        }
        written.push_back(path);
        break;
      }
      case ReportFormat::subsets: {
        if (ctx.freq == nullptr) {
          throw Error(Errc::invalid_input, "subsets report requires a frequency table");
        }
        const auto path = out_dir / "subsets.tsv";
        std::ofstream out(path, std::ios::binary);
        out << "model\tsubset\tscored_captions\tcaos_t\tcaos_x\tcaos_k\n";
        for (const auto& selector :
             {SubsetSelector::all(), SubsetSelector::in_domain_only(),
              SubsetSelector::out_of_domain_only(),
              SubsetSelector::excluding_top_m(
                  std::min<int>(3, static_cast<int>(ctx.freq->size())))}) {
          const SubsetAggregate agg = subset_scores(*ctx.records, selector, ctx.freq);
          out << ctx.model_name << "\t" << agg.name << "\t" << agg.scored_captions
              << "\t" << fmt_optional(agg.scores.caos_t) << "\t"
              << fmt_optional(agg.scores.caos_x) << "\t"
              << fmt_optional(agg.scores.caos_k) << "\n";
        }
        written.push_back(path);
        break;
      }
      case ReportFormat::instruction_variability: {
        RunReport report = aggregate_run(*ctx.records);
        const auto path = out_dir / "variability.tsv";
        std::ofstream out(path, std::ios::binary);
        out << "model\tinstruction\tscored_captions\tcaos_t\tcaos_x\tcaos_k\tcaos_avg\n";
        std::vector<double> t, x, k, avg;
        for (const auto& agg : report.per_instruction) {
          out << ctx.model_name << "\t" << agg.instruction_id << "\t"
              << agg.scored_captions << "\t" << fmt_optional(agg.scores.caos_t)
              << "\t" << fmt_optional(agg.scores.caos_x) << "\t"
              << fmt_optional(agg.scores.caos_k) << "\t"
              << fmt_optional(agg.scores.caos_avg) << "\n";
          if (agg.scores.caos_t) t.push_back(*agg.scores.caos_t);
          if (agg.scores.caos_x) x.push_back(*agg.scores.caos_x);
          if (agg.scores.caos_k) k.push_back(*agg.scores.caos_k);
          if (agg.scores.caos_avg) avg.push_back(*agg.scores.caos_avg);
        }
        auto mean = [](const std::vector<double>& v) -> std::optional<double> {
          if (v.empty()) return std::nullopt;
          double sum = 0;
          for (double d : v) sum += d;
          return sum / static_cast<double>(v.size());
        };
        out << ctx.model_name << "\tmean\t" << report.scored_captions << "\t"
            << fmt_optional(mean(t)) << "\t" << fmt_optional(mean(x)) << "\t"
            << fmt_optional(mean(k)) << "\t" << fmt_optional(mean(avg)) << "\n";
        written.push_back(path);
        break;
      }
    }
  }
  return written;
}

void convert_coco(const std::filesystem::path& coco_json,
                  const std::filesystem::path& out_jsonl,
                  const std::string& image_root) {
  const json doc = parse_json_file(coco_json, "COCO annotation file");
  std::map<std::int64_t, std::string> categories;
  std::map<std::int64_t, std::string> files;
  std::map<std::int64_t, std::set<std::string>> labels;
  try {
    for (const auto& c : doc.at("categories")) {
      categories[c.at("id").get<std::int64_t>()] =
          text::to_lower(c.at("name").get<std::string>());
    }
    for (const auto& img : doc.at("images")) {
      files[img.at("id").get<std::int64_t>()] = img.at("file_name").get<std::string>();
    }
    for (const auto& a : doc.at("annotations")) {
      const auto category = categories.find(a.at("category_id").get<std::int64_t>());
      if (category == categories.end()) {
        throw Error(Errc::parse, "annotation references unknown category id");
      }
      labels[a.at("image_id").get<std::int64_t>()].insert(category->second);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, coco_json.string() + ": " + e.what());
  }
  std::ofstream out(out_jsonl, std::ios::binary);
  if (!out) {
    throw Error(Errc::config, "cannot write " + out_jsonl.string());
  }
  for (const auto& [id, file_name] : files) {
    json rec;
    rec["image_id"] = fmt::format("{:012d}", id);
    rec["image"] = image_root.empty() ? file_name : image_root + "/" + file_name;
    json ls = json::array();
    auto it = labels.find(id);
    if (it != labels.end()) {
      for (const auto& label : it->second) ls.push_back(label);
    }
    rec["labels"] = std::move(ls);
    out << rec.dump() << "\n";
  }
}

}  // namespace caos
