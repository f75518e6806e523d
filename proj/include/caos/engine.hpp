#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caos/gateway.hpp"
#include "caos/lexicon.hpp"
#include "caos/oracle.hpp"
#include "caos/similarity.hpp"

namespace caos {

/// The six per-caption scores. All six are null exactly when the caption
/// has no scorable hallucinated mention (|H| = 0).
struct CaosScores {
  std::optional<double> caos_t;
  std::optional<double> caos_x;
  std::optional<double> caos_k;
  std::optional<double> caos_t_over_x;
  std::optional<double> caos_x_over_k;
  std::optional<double> caos_avg;
  int hallucination_count = 0;  // |H|
  int k_used = 0;
};

/// One hallucinated mention with the three similarity readings taken at its
/// position in the caption.
struct HallucinationDetail {
  ObjectLabel label;
  int position = 0;  // index into the mention list L
  double sim_t = 0.0;
  double sim_x = 0.0;
  double sim_k = 0.0;
  bool in_domain = false;
};

/// Everything known about one evaluated caption.
struct CaptionRecord {
  std::string image_id;
  int instruction_id = 0;
  std::string caption;
  std::vector<ObjectMention> mentions;  // ordered list L
  std::vector<int> genuine;             // map M, aligned with mentions
  std::vector<ObjectLabel> ground_truth;
  std::vector<HallucinationDetail> hallucinations;
  CaosScores scores;
  std::optional<double> precision;
  std::optional<double> recall;
  int skipped_mentions = 0;        // hallucinations dropped from H (no embedding)
  std::uint64_t pool_oov_skips = 0;  // pool members skipped inside max_similarity

  nlohmann::json to_json() const;
  static CaptionRecord from_json(const nlohmann::json& j);
};

/// Inputs to per-caption scoring, decoupled from how captions were produced.
struct ScoringInput {
  std::string image_id;
  int instruction_id = 0;
  std::string caption;
  std::vector<ObjectMention> mentions;
  std::vector<int> genuine;  // M
  std::set<ObjectLabel> ground_truth;
};

/// Scores one caption: walks L in order, and for every hallucinated mention
/// records its maximum similarity against the ground-truth pool T, the
/// preceding-objects pool X (seeded with T plus genuine out-of-domain
/// mentions, growing with every mention) and the top-k pool K. Hallucinated
/// mentions whose label cannot be embedded are dropped from H with a logged
/// skip. Throws Errc::config when no K label is embeddable.
CaptionRecord caos_for_caption(const ScoringInput& input,
                               const std::vector<ObjectLabel>& top_k_labels,
                               const EmbeddingStore& store);

/// precision = genuine fraction of L (null for empty L); recall = distinct
/// ground-truth labels mentioned / distinct ground-truth labels (null for
/// empty ground truth).
std::pair<std::optional<double>, std::optional<double>> precision_recall(
    const std::vector<ObjectMention>& mentions, const std::vector<int>& genuine,
    const std::set<ObjectLabel>& ground_truth);

struct AggregateScores {
  std::optional<double> caos_t;
  std::optional<double> caos_x;
  std::optional<double> caos_k;
  std::optional<double> caos_t_over_x;
  std::optional<double> caos_x_over_k;
  std::optional<double> caos_avg;
};

/// Ratio and average aggregation over aggregate means: t/x, x/k and the
/// three-way mean, with null ratios on zero denominators.
AggregateScores make_aggregate(std::optional<double> mean_t,
                               std::optional<double> mean_x,
                               std::optional<double> mean_k);

struct SubsetAggregate {
  std::string name;
  AggregateScores scores;
  int scored_captions = 0;
};

struct InstructionAggregate {
  int instruction_id = 0;
  int captions = 0;
  int scored_captions = 0;
  AggregateScores scores;
  double chair_s = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  double objects_per_caption = 0.0;
};

struct RunReport {
  int total_captions = 0;
  int scored_captions = 0;    // hallucination_count >= 1
  int unscored_captions = 0;  // hallucination_count == 0
  int failed_captions = 0;    // filled by the pipeline
  bool run_failed = false;
  AggregateScores scores;
  double chair_s = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  double objects_per_caption = 0.0;
  int k_used = 0;
  std::uint64_t skipped_mentions = 0;
  std::uint64_t pool_oov_skips = 0;
  /// fraction of in-domain hallucinations equal to the top co-occurrer of a
  /// preceding in-domain mention; set when a co-occurrence table is loaded
  std::optional<double> cooc_hallucination_fraction;
  std::vector<SubsetAggregate> subsets;
  std::vector<InstructionAggregate> per_instruction;
};

/// Dataset-level aggregation: CAOS macro-averaged over captions with at
/// least one hallucination, chair_s as the fraction of captions with one,
/// precision/recall/objects-per-caption over all captions, ratios from
/// aggregate means. Records are processed in (image id, instruction id)
/// order regardless of input order.
RunReport aggregate_run(const std::vector<CaptionRecord>& records);

/// Subset selector for hallucination detail rows.
struct SubsetSelector {
  enum class Kind { all, in_domain_only, out_of_domain_only, excluding_top_m } kind =
      Kind::all;
  int m = 0;  // for excluding_top_m

  static SubsetSelector all() { return {Kind::all, 0}; }
  static SubsetSelector in_domain_only() { return {Kind::in_domain_only, 0}; }
  static SubsetSelector out_of_domain_only() { return {Kind::out_of_domain_only, 0}; }
  static SubsetSelector excluding_top_m(int m) { return {Kind::excluding_top_m, m}; }
  std::string name() const;
};

/// Filters detail rows by the selector, averages per caption over the
/// surviving rows (captions with none drop out) and aggregates.
SubsetAggregate subset_scores(const std::vector<CaptionRecord>& records,
                              const SubsetSelector& selector,
                              const FrequencyTable* freq);

/// Aggregate CAOS_K for each k, reusing cached per-pair similarities. H
/// membership is taken from the records' detail rows, so the curve at the
/// run's own k reproduces the run's aggregate CAOS_K.
std::map<int, std::optional<double>> topk_sweep(
    const std::vector<CaptionRecord>& records, const FrequencyTable& freq,
    const std::vector<int>& k_range, const EmbeddingStore& store);

/// Fraction of in-domain hallucinated mentions that equal the most frequent
/// co-occurrer of at least one preceding in-domain mention; null when there
/// are no in-domain hallucinations.
std::optional<double> cooccurrence_hallucination_fraction(
    const std::vector<CaptionRecord>& records, const CoOccurrenceTable& cooc);

// ---------------------------------------------------------------------------
// POPE-style yes/no probing

enum class NegativeSampling { random, popular, adversarial };

NegativeSampling negative_sampling_from_name(const std::string& name);
const char* negative_sampling_name(NegativeSampling s);

struct PopeInstance {
  ImageRef image;
  std::set<ObjectLabel> ground_truth;
};

struct PopeQuestion {
  std::string image_id;
  ObjectLabel object;
  bool expected = false;  // object actually present
  bool answered_yes = false;
};

struct PopeResult {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int questions = 0;
  int yes_answers = 0;
  std::vector<PopeQuestion> transcript;
};

std::string pope_question(const ObjectLabel& object);

/// Builds balanced present/absent questions per image (sampling negatives
/// by the chosen strategy), queries the model, normalizes yes/no replies
/// (unparseable or failed -> no) and computes the four metrics.
PopeResult pope_evaluate(const std::vector<PopeInstance>& instances,
                         Gateway& gateway, const EndpointDescriptor& model,
                         NegativeSampling sampling, int questions_per_image,
                         std::uint32_t seed, const Vocabulary& vocab,
                         const FrequencyTable* freq, const CoOccurrenceTable* cooc);

}  // namespace caos
