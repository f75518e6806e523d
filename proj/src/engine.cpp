#include "caos/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <spdlog/spdlog.h>

#include "caos/text.hpp"

namespace caos {

using nlohmann::json;

namespace {

json optional_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

json CaptionRecord::to_json() const {
  json j;
  j["image_id"] = image_id;
  j["instruction_id"] = instruction_id;
  j["caption"] = caption;
  json ms = json::array();
  for (std::size_t i = 0; i < mentions.size(); ++i) {
    const auto& m = mentions[i];
    ms.push_back(json{{"label", m.label},
                      {"surface", m.surface},
                      {"offset", m.offset},
                      {"source", mention_source_name(m.source)},
                      {"in_domain", m.in_domain},
                      {"genuine", genuine.at(i)}});
  }
  j["mentions"] = std::move(ms);
  j["ground_truth"] = ground_truth;
  json hs = json::array();
  for (const auto& h : hallucinations) {
    hs.push_back(json{{"label", h.label},
                      {"position", h.position},
                      {"sim_t", h.sim_t},
                      {"sim_x", h.sim_x},
                      {"sim_k", h.sim_k},
                      {"in_domain", h.in_domain}});
  }
  j["hallucinations"] = std::move(hs);
  j["scores"] = json{{"caos_t", optional_to_json(scores.caos_t)},
                     {"caos_x", optional_to_json(scores.caos_x)},
                     {"caos_k", optional_to_json(scores.caos_k)},
                     {"caos_t_over_x", optional_to_json(scores.caos_t_over_x)},
                     {"caos_x_over_k", optional_to_json(scores.caos_x_over_k)},
                     {"caos_avg", optional_to_json(scores.caos_avg)},
                     {"hallucination_count", scores.hallucination_count},
                     {"k_used", scores.k_used}};
  j["precision"] = optional_to_json(precision);
  j["recall"] = optional_to_json(recall);
  j["skipped_mentions"] = skipped_mentions;
  j["pool_oov_skips"] = pool_oov_skips;
  return j;
}

CaptionRecord CaptionRecord::from_json(const json& j) {
  CaptionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.instruction_id = j.at("instruction_id").get<int>();
  r.caption = j.at("caption").get<std::string>();
  for (const auto& m : j.at("mentions")) {
    ObjectMention mention;
    mention.label = m.at("label").get<std::string>();
    mention.surface = m.at("surface").get<std::string>();
    mention.offset = m.at("offset").get<std::size_t>();
    mention.source = m.at("source").get<std::string>() == "rule"
                         ? ObjectMention::Source::rule
                         : ObjectMention::Source::llm;
    mention.in_domain = m.at("in_domain").get<bool>();
    r.mentions.push_back(std::move(mention));
    r.genuine.push_back(m.at("genuine").get<int>());
  }
  r.ground_truth = j.at("ground_truth").get<std::vector<std::string>>();
  for (const auto& h : j.at("hallucinations")) {
    r.hallucinations.push_back(HallucinationDetail{
        h.at("label").get<std::string>(), h.at("position").get<int>(),
        h.at("sim_t").get<double>(), h.at("sim_x").get<double>(),
        h.at("sim_k").get<double>(), h.at("in_domain").get<bool>()});
  }
  const auto& s = j.at("scores");
  r.scores.caos_t = optional_from_json(s.at("caos_t"));
  r.scores.caos_x = optional_from_json(s.at("caos_x"));
  r.scores.caos_k = optional_from_json(s.at("caos_k"));
  r.scores.caos_t_over_x = optional_from_json(s.at("caos_t_over_x"));
  r.scores.caos_x_over_k = optional_from_json(s.at("caos_x_over_k"));
  r.scores.caos_avg = optional_from_json(s.at("caos_avg"));
  r.scores.hallucination_count = s.at("hallucination_count").get<int>();
  r.scores.k_used = s.at("k_used").get<int>();
  r.precision = optional_from_json(j.at("precision"));
  r.recall = optional_from_json(j.at("recall"));
  r.skipped_mentions = j.at("skipped_mentions").get<int>();
  r.pool_oov_skips = j.at("pool_oov_skips").get<std::uint64_t>();
  return r;
}

CaptionRecord caos_for_caption(const ScoringInput& input,
                               const std::vector<ObjectLabel>& top_k_labels,
                               const EmbeddingStore& store) {
  if (input.genuine.size() != input.mentions.size()) {
    throw Error(Errc::invalid_input,
                "caos_for_caption: M must label every mention of L");
  }
  if (top_k_labels.empty()) {
    throw Error(Errc::invalid_input, "caos_for_caption: K is empty");
  }
  // K must be usable at all: a fully unembeddable K is a configuration
  // problem, not a per-caption condition.
  std::set<ObjectLabel> k_pool(top_k_labels.begin(), top_k_labels.end());
  {
    bool any = false;
    for (const auto& label : k_pool) {
      try {
        embed_object(label, store);
        any = true;
        break;
      } catch (const Error& e) {
        if (e.code() != Errc::out_of_vocabulary) throw;
      }
    }
    if (!any) {
      throw Error(Errc::config, "no label of K is embeddable under store '" +
                                    store.name() + "'");
    }
  }

  CaptionRecord record;
  record.image_id = input.image_id;
  record.instruction_id = input.instruction_id;
  record.caption = input.caption;
  record.mentions = input.mentions;
  record.genuine = input.genuine;
  record.ground_truth.assign(input.ground_truth.begin(), input.ground_truth.end());

  // T starts as the ground-truth objects plus the genuine out-of-domain
  // mentions (T'); X starts equal to T and absorbs every mention after its
  // step, so later hallucinations see earlier ones.
  std::set<ObjectLabel> t_pool = input.ground_truth;
  for (std::size_t i = 0; i < input.mentions.size(); ++i) {
    if (input.genuine[i] == 1 && !input.mentions[i].in_domain) {
      t_pool.insert(input.mentions[i].label);
    }
  }
  std::set<ObjectLabel> x_pool = t_pool;

  std::vector<double> sims_t, sims_x, sims_k;
  for (std::size_t i = 0; i < input.mentions.size(); ++i) {
    const ObjectMention& mention = input.mentions[i];
    if (input.genuine[i] == 0) {
      try {
        const MaxSimilarity st = max_similarity(mention.label, t_pool, store);
        const MaxSimilarity sx = max_similarity(mention.label, x_pool, store);
        const MaxSimilarity sk = max_similarity(mention.label, k_pool, store);
        record.pool_oov_skips += st.skipped + sx.skipped + sk.skipped;
        sims_t.push_back(st.value);
        sims_x.push_back(sx.value);
        sims_k.push_back(sk.value);
        record.hallucinations.push_back(
            HallucinationDetail{mention.label, static_cast<int>(i), st.value,
                                sx.value, sk.value, mention.in_domain});
      } catch (const Error& e) {
        if (e.code() != Errc::out_of_vocabulary && e.code() != Errc::empty_pool) {
          throw;
        }
        ++record.skipped_mentions;
        spdlog::warn("caption {}: hallucinated mention '{}' dropped from H ({})",
                     input.image_id, mention.label, e.what());
      }
    }
    x_pool.insert(mention.label);
  }

  CaosScores& s = record.scores;
  s.k_used = static_cast<int>(top_k_labels.size());
  s.hallucination_count = static_cast<int>(sims_t.size());
  if (s.hallucination_count > 0) {
    s.caos_t = mean_of(sims_t);
    s.caos_x = mean_of(sims_x);
    s.caos_k = mean_of(sims_k);
    if (*s.caos_x != 0.0) s.caos_t_over_x = *s.caos_t / *s.caos_x;
    if (*s.caos_k != 0.0) s.caos_x_over_k = *s.caos_x / *s.caos_k;
    s.caos_avg = (*s.caos_t + *s.caos_x + *s.caos_k) / 3.0;
  }
  return record;
}

std::pair<std::optional<double>, std::optional<double>> precision_recall(
    const std::vector<ObjectMention>& mentions, const std::vector<int>& genuine,
    const std::set<ObjectLabel>& ground_truth) {
  if (genuine.size() != mentions.size()) {
    throw Error(Errc::invalid_input, "precision_recall: M must label every mention");
  }
  std::optional<double> precision;
  if (!mentions.empty()) {
    int genuine_count = 0;
    for (int g : genuine) genuine_count += g == 1 ? 1 : 0;
    precision = static_cast<double>(genuine_count) / static_cast<double>(mentions.size());
  }
  std::optional<double> recall;
  if (!ground_truth.empty()) {
    std::set<ObjectLabel> mentioned;
    for (const auto& m : mentions) {
      if (ground_truth.count(m.label)) mentioned.insert(m.label);
    }
    recall = static_cast<double>(mentioned.size()) /
             static_cast<double>(ground_truth.size());
  }
  return {precision, recall};
}

AggregateScores make_aggregate(std::optional<double> mean_t,
                               std::optional<double> mean_x,
                               std::optional<double> mean_k) {
  AggregateScores agg;
  agg.caos_t = mean_t;
  agg.caos_x = mean_x;
  agg.caos_k = mean_k;
  if (mean_t && mean_x && *mean_x != 0.0) agg.caos_t_over_x = *mean_t / *mean_x;
  if (mean_x && mean_k && *mean_k != 0.0) agg.caos_x_over_k = *mean_x / *mean_k;
  if (mean_t && mean_x && mean_k) {
    agg.caos_avg = (*mean_t + *mean_x + *mean_k) / 3.0;
  }
  return agg;
}

namespace {

std::vector<const CaptionRecord*> sorted_views(const std::vector<CaptionRecord>& records) {
  std::vector<const CaptionRecord*> views;
  views.reserve(records.size());
  for (const auto& r : records) views.push_back(&r);
  std::sort(views.begin(), views.end(), [](const CaptionRecord* a, const CaptionRecord* b) {
    if (a->image_id != b->image_id) return a->image_id < b->image_id;
    return a->instruction_id < b->instruction_id;
  });
  return views;
}

struct RecordStats {
  std::vector<double> t, x, k;
  std::vector<double> precision, recall;
  double mention_total = 0;
  int captions = 0;
  int scored = 0;

  void add(const CaptionRecord& r) {
    ++captions;
    if (r.scores.hallucination_count > 0) {
      ++scored;
      t.push_back(*r.scores.caos_t);
      x.push_back(*r.scores.caos_x);
      k.push_back(*r.scores.caos_k);
    }
    if (r.precision) precision.push_back(*r.precision);
    if (r.recall) recall.push_back(*r.recall);
    mention_total += static_cast<double>(r.mentions.size());
  }
};

}  // namespace

RunReport aggregate_run(const std::vector<CaptionRecord>& records) {
  if (records.empty()) {
    throw Error(Errc::invalid_input, "aggregate_run: no records");
  }
  const auto views = sorted_views(records);

  RunReport report;
  RecordStats all;
  std::map<int, RecordStats> per_instruction;
  for (const CaptionRecord* r : views) {
    all.add(*r);
    per_instruction[r->instruction_id].add(*r);
    report.skipped_mentions += static_cast<std::uint64_t>(r->skipped_mentions);
    report.pool_oov_skips += r->pool_oov_skips;
    report.k_used = std::max(report.k_used, r->scores.k_used);
  }

  report.total_captions = all.captions;
  report.scored_captions = all.scored;
  report.unscored_captions = all.captions - all.scored;
  report.scores = make_aggregate(mean_of(all.t), mean_of(all.x), mean_of(all.k));
  report.chair_s = static_cast<double>(all.scored) / static_cast<double>(all.captions);
  report.precision = mean_of(all.precision);
  report.recall = mean_of(all.recall);
  report.objects_per_caption = all.mention_total / static_cast<double>(all.captions);

  for (const auto& [instruction_id, stats] : per_instruction) {
    InstructionAggregate agg;
    agg.instruction_id = instruction_id;
    agg.captions = stats.captions;
    agg.scored_captions = stats.scored;
    agg.scores = make_aggregate(mean_of(stats.t), mean_of(stats.x), mean_of(stats.k));
    agg.chair_s = static_cast<double>(stats.scored) / static_cast<double>(stats.captions);
    agg.precision = mean_of(stats.precision);
    agg.recall = mean_of(stats.recall);
    agg.objects_per_caption =
        stats.mention_total / static_cast<double>(stats.captions);
    report.per_instruction.push_back(agg);
  }
  return report;
}

std::string SubsetSelector::name() const {
  switch (kind) {
    case Kind::all: return "all";
    case Kind::in_domain_only: return "in_domain_only";
    case Kind::out_of_domain_only: return "out_of_domain_only";
    case Kind::excluding_top_m: return "excluding_top_" + std::to_string(m);
  }
  return "unknown";
}

SubsetAggregate subset_scores(const std::vector<CaptionRecord>& records,
                              const SubsetSelector& selector,
                              const FrequencyTable* freq) {
  std::set<ObjectLabel> excluded;
  if (selector.kind == SubsetSelector::Kind::excluding_top_m) {
    if (freq == nullptr) {
      throw Error(Errc::invalid_input,
                  "excluding_top_m subset requires a frequency table");
    }
    for (const auto& label : freq->top_k(static_cast<std::size_t>(selector.m))) {
      excluded.insert(label);
    }
  }

  SubsetAggregate out;
  out.name = selector.name();
  std::vector<double> t, x, k;
  for (const CaptionRecord* r : sorted_views(records)) {
    std::vector<double> rt, rx, rk;
    for (const HallucinationDetail& h : r->hallucinations) {
      switch (selector.kind) {
        case SubsetSelector::Kind::all:
          break;
        case SubsetSelector::Kind::in_domain_only:
          if (!h.in_domain) continue;
          break;
        case SubsetSelector::Kind::out_of_domain_only:
          if (h.in_domain) continue;
          break;
        case SubsetSelector::Kind::excluding_top_m:
          if (excluded.count(h.label)) continue;
          break;
      }
      rt.push_back(h.sim_t);
      rx.push_back(h.sim_x);
      rk.push_back(h.sim_k);
    }
    if (rt.empty()) continue;
    ++out.scored_captions;
    t.push_back(*mean_of(rt));
    x.push_back(*mean_of(rx));
    k.push_back(*mean_of(rk));
  }
  out.scores = make_aggregate(mean_of(t), mean_of(x), mean_of(k));
  return out;
}

std::map<int, std::optional<double>> topk_sweep(
    const std::vector<CaptionRecord>& records, const FrequencyTable& freq,
    const std::vector<int>& k_range, const EmbeddingStore& store) {
  if (k_range.empty()) {
    throw Error(Errc::invalid_input, "topk_sweep: empty k range");
  }
  int k_max = 0;
  for (int k : k_range) {
    if (k < 1 || static_cast<std::size_t>(k) > freq.size()) {
      throw Error(Errc::invalid_input,
                  "topk_sweep: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(freq.size()) + "]");
    }
    k_max = std::max(k_max, k);
  }
  const std::vector<ObjectLabel> ordered = freq.top_k(static_cast<std::size_t>(k_max));

  // sim(h.label, K[j]) memoized across captions and k values
  std::map<std::pair<ObjectLabel, ObjectLabel>, std::optional<double>> pair_sims;
  auto pair_sim = [&](const ObjectLabel& a, const ObjectLabel& b) -> std::optional<double> {
    const auto key = a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
    auto it = pair_sims.find(key);
    if (it != pair_sims.end()) return it->second;
    std::optional<double> sim;
    try {
      sim = cosine_similarity(embed_object(a, store), embed_object(b, store));
    } catch (const Error& e) {
      if (e.code() != Errc::out_of_vocabulary) throw;
    }
    pair_sims.emplace(key, sim);
    return sim;
  };

  std::map<int, std::vector<double>> per_k_caption_means;
  for (const CaptionRecord* r : sorted_views(records)) {
    if (r->hallucinations.empty()) continue;
    // running max over the ordered frequent labels, one pass per mention
    std::vector<std::vector<double>> maxima(r->hallucinations.size());
    for (std::size_t hi = 0; hi < r->hallucinations.size(); ++hi) {
      double best = std::numeric_limits<double>::lowest();
      bool any = false;
      maxima[hi].reserve(ordered.size());
      for (const auto& label : ordered) {
        if (auto sim = pair_sim(r->hallucinations[hi].label, label)) {
          best = any ? std::max(best, *sim) : *sim;
          any = true;
        }
        maxima[hi].push_back(any ? best : std::numeric_limits<double>::quiet_NaN());
      }
    }
    for (int k : k_range) {
      std::vector<double> sims;
      for (const auto& row : maxima) {
        const double v = row[static_cast<std::size_t>(k) - 1];
        if (!std::isnan(v)) sims.push_back(v);
      }
      if (!sims.empty()) {
        per_k_caption_means[k].push_back(*mean_of(sims));
      }
    }
  }

  std::map<int, std::optional<double>> curve;
  for (int k : k_range) {
    auto it = per_k_caption_means.find(k);
    curve[k] = it == per_k_caption_means.end() ? std::nullopt : mean_of(it->second);
  }
  return curve;
}

std::optional<double> cooccurrence_hallucination_fraction(
    const std::vector<CaptionRecord>& records, const CoOccurrenceTable& cooc) {
  std::uint64_t in_domain_hallucinations = 0;
  std::uint64_t matches = 0;
  for (const CaptionRecord* r : sorted_views(records)) {
    for (std::size_t i = 0; i < r->mentions.size(); ++i) {
      const ObjectMention& h = r->mentions[i];
      if (r->genuine[i] != 0 || !h.in_domain) continue;
      ++in_domain_hallucinations;
      bool matched = false;
      for (std::size_t p = 0; p < i && !matched; ++p) {
        const ObjectMention& prev = r->mentions[p];
        if (!prev.in_domain) continue;
        try {
          matched = cooc.most_frequent_cooccurrer(prev.label) == h.label;
        } catch (const Error& e) {
          if (e.code() != Errc::no_cooccurrence) throw;
        }
      }
      if (matched) ++matches;
    }
  }
  if (in_domain_hallucinations == 0) return std::nullopt;
  return static_cast<double>(matches) / static_cast<double>(in_domain_hallucinations);
}

// ---------------------------------------------------------------------------
// POPE

NegativeSampling negative_sampling_from_name(const std::string& name) {
  if (name == "random") return NegativeSampling::random;
  if (name == "popular") return NegativeSampling::popular;
  if (name == "adversarial") return NegativeSampling::adversarial;
  throw Error(Errc::config, "unknown negative sampling strategy: '" + name + "'");
}

const char* negative_sampling_name(NegativeSampling s) {
  switch (s) {
    case NegativeSampling::random: return "random";
    case NegativeSampling::popular: return "popular";
    case NegativeSampling::adversarial: return "adversarial";
  }
  return "unknown";
}

std::string pope_question(const ObjectLabel& object) {
  return "Is there a " + object + " in the image?";
}

namespace {

bool normalize_yes_no(const std::string& reply) {
  bool yes = false;
  bool no = false;
  for (const auto& tok : text::tokenize(reply)) {
    if (tok.lower == "yes") yes = true;
    if (tok.lower == "no") no = true;
  }
  return yes && !no;
}

std::vector<ObjectLabel> sample_negatives(const PopeInstance& instance,
                                          NegativeSampling sampling,
                                          std::size_t want, const Vocabulary& vocab,
                                          const FrequencyTable* freq,
                                          const CoOccurrenceTable* cooc,
                                          std::mt19937& rng) {
  std::vector<ObjectLabel> candidates;
  switch (sampling) {
    case NegativeSampling::random: {
      for (const auto& label : vocab.labels()) {
        if (!instance.ground_truth.count(label)) candidates.push_back(label);
      }
      std::shuffle(candidates.begin(), candidates.end(), rng);
      break;
    }
    case NegativeSampling::popular: {
      if (freq == nullptr) {
        throw Error(Errc::config, "popular sampling requires a frequency table");
      }
      for (const auto& label : freq->top_k(freq->size())) {
        if (!instance.ground_truth.count(label)) candidates.push_back(label);
      }
      break;
    }
    case NegativeSampling::adversarial: {
      if (cooc == nullptr || freq == nullptr) {
        throw Error(Errc::config,
                    "adversarial sampling requires co-occurrence and frequency tables");
      }
      // partners of ground-truth objects first (most frequent co-occurrers),
      // then popular fill
      std::set<ObjectLabel> seen;
      for (const auto& gt : instance.ground_truth) {
        try {
          const auto partner = cooc->most_frequent_cooccurrer(gt);
          if (!instance.ground_truth.count(partner) && seen.insert(partner).second) {
            candidates.push_back(partner);
          }
        } catch (const Error& e) {
          if (e.code() != Errc::no_cooccurrence) throw;
        }
      }
      for (const auto& label : freq->top_k(freq->size())) {
        if (!instance.ground_truth.count(label) && seen.insert(label).second) {
          candidates.push_back(label);
        }
      }
      break;
    }
  }
  if (candidates.size() > want) candidates.resize(want);
  return candidates;
}

}  // namespace

PopeResult pope_evaluate(const std::vector<PopeInstance>& instances,
                         Gateway& gateway, const EndpointDescriptor& model,
                         NegativeSampling sampling, int questions_per_image,
                         std::uint32_t seed, const Vocabulary& vocab,
                         const FrequencyTable* freq, const CoOccurrenceTable* cooc) {
  if (questions_per_image < 2) {
    throw Error(Errc::invalid_input, "pope_evaluate: need at least 2 questions per image");
  }
  std::mt19937 rng(seed);
  PopeResult result;
  int tp = 0, fp = 0, tn = 0, fn = 0;

  for (const PopeInstance& instance : instances) {
    const std::size_t half = static_cast<std::size_t>(questions_per_image) / 2;
    std::vector<ObjectLabel> positives(instance.ground_truth.begin(),
                                       instance.ground_truth.end());
    std::shuffle(positives.begin(), positives.end(), rng);
    if (positives.size() > half) positives.resize(half);
    const auto negatives =
        sample_negatives(instance, sampling, positives.size(), vocab, freq, cooc, rng);

    std::vector<std::pair<ObjectLabel, bool>> questions;
    questions.reserve(positives.size() + negatives.size());
    for (const auto& label : positives) questions.emplace_back(label, true);
    for (const auto& label : negatives) questions.emplace_back(label, false);

    for (const auto& [object, expected] : questions) {
      bool answered_yes = false;
      try {
        const std::string reply = gateway.chat_complete(
            model, {ChatTurn::user_turn(pope_question(object), instance.image)},
            Decoding{});
        answered_yes = normalize_yes_no(reply);
      } catch (const Error& e) {
        spdlog::warn("pope: question ({}, '{}') failed ({}); counting as no",
                     instance.image.id, object, e.what());
      }
      result.transcript.push_back(
          PopeQuestion{instance.image.id, object, expected, answered_yes});
      ++result.questions;
      if (answered_yes) ++result.yes_answers;
      if (expected && answered_yes) ++tp;
      if (!expected && answered_yes) ++fp;
      if (!expected && !answered_yes) ++tn;
      if (expected && !answered_yes) ++fn;
    }
  }

  const int total = tp + fp + tn + fn;
  result.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  result.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  result.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  result.f1 = (result.precision + result.recall) > 0
                  ? 2.0 * result.precision * result.recall /
                        (result.precision + result.recall)
                  : 0.0;
  return result;
}

}  // namespace caos
