#pragma once

// Independent straight-line reimplementation of the per-caption scoring
// algorithm, used only as a test oracle. Deliberately shares no code with
// the library: its own tokenizer-free embedding composition, its own cosine
// and its own pool bookkeeping, all in plain loops.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace caos::reference {

struct Instance {
  // mention labels in caption order, with flags aligned by index
  std::vector<std::string> mention_labels;
  std::vector<bool> mention_in_domain;
  std::vector<int> genuine;  // M
  std::vector<std::string> ground_truth;
  std::vector<std::string> top_k;
  std::map<std::string, std::vector<double>> vectors;  // token -> embedding
};

struct Scores {
  bool scored = false;
  double t = 0, x = 0, k = 0;
  std::optional<double> t_over_x, x_over_k;
  double avg = 0;
  int h = 0;
  int skipped = 0;
  std::vector<double> sims_t, sims_x, sims_k;  // per hallucination, in order
};

inline std::vector<std::string> split_words(const std::string& label) {
  std::vector<std::string> words;
  std::string current;
  for (char c : label) {
    if (c == ' ') {
      if (!current.empty()) words.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

inline std::string strip_plural(const std::string& w) {
  auto ends = [&](const char* s) {
    std::string suffix(s);
    return w.size() >= suffix.size() &&
           w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (w == "buses" || w == "busses") return "bus";
  if (w.size() >= 4 && ends("ies")) return w.substr(0, w.size() - 3) + "y";
  if (w.size() >= 4 && ends("es")) {
    std::string stem = w.substr(0, w.size() - 2);
    auto stem_ends = [&](const char* s) {
      std::string suffix(s);
      return stem.size() >= suffix.size() &&
             stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (stem_ends("ss") || stem_ends("x") || stem_ends("z") || stem_ends("ch") ||
        stem_ends("sh")) {
      return stem;
    }
  }
  if (w.size() >= 3 && ends("s") && !ends("ss") && !ends("us") && !ends("is")) {
    return w.substr(0, w.size() - 1);
  }
  return w;
}

// mean of per-word vectors over words found (word, then its singular);
// single-word labels resolve directly; nullopt when nothing resolves
inline std::optional<std::vector<double>> embed(
    const std::string& label, const std::map<std::string, std::vector<double>>& vectors) {
  const auto words = split_words(label);
  std::vector<const std::vector<double>*> found;
  for (const auto& w : words) {
    auto it = vectors.find(w);
    if (it == vectors.end()) it = vectors.find(strip_plural(w));
    if (it != vectors.end()) found.push_back(&it->second);
  }
  if (found.empty()) return std::nullopt;
  if (words.size() == 1) return *found[0];
  std::vector<double> mean(found[0]->size(), 0.0);
  for (const auto* v : found) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*v)[i];
  }
  for (double& c : mean) c /= static_cast<double>(found.size());
  return mean;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double v = dot / (std::sqrt(na) * std::sqrt(nb));
  if (v > 1.0) v = 1.0;
  if (v < -1.0) v = -1.0;
  return v;
}

// max over embeddable pool members; nullopt when none embeds
inline std::optional<double> max_over_pool(
    const std::vector<double>& target, const std::vector<std::string>& pool,
    const std::map<std::string, std::vector<double>>& vectors) {
  bool any = false;
  double best = 0;
  for (const auto& member : pool) {
    auto v = embed(member, vectors);
    if (!v) continue;
    const double sim = cosine(target, *v);
    if (!any || sim > best) best = sim;
    any = true;
  }
  if (!any) return std::nullopt;
  return best;
}

inline void add_unique(std::vector<std::string>& pool, const std::string& label) {
  for (const auto& existing : pool) {
    if (existing == label) return;
  }
  pool.push_back(label);
}

inline Scores score(const Instance& instance) {
  Scores result;

  std::vector<std::string> t_pool;
  for (const auto& gt : instance.ground_truth) add_unique(t_pool, gt);
  for (std::size_t i = 0; i < instance.mention_labels.size(); ++i) {
    if (instance.genuine[i] == 1 && !instance.mention_in_domain[i]) {
      add_unique(t_pool, instance.mention_labels[i]);
    }
  }
  std::vector<std::string> x_pool = t_pool;

  for (std::size_t i = 0; i < instance.mention_labels.size(); ++i) {
    const std::string& label = instance.mention_labels[i];
    if (instance.genuine[i] == 0) {
      auto target = embed(label, instance.vectors);
      std::optional<double> st, sx, sk;
      if (target) {
        st = max_over_pool(*target, t_pool, instance.vectors);
        sx = max_over_pool(*target, x_pool, instance.vectors);
        sk = max_over_pool(*target, instance.top_k, instance.vectors);
      }
      if (target && st && sx && sk) {
        result.sims_t.push_back(*st);
        result.sims_x.push_back(*sx);
        result.sims_k.push_back(*sk);
        ++result.h;
      } else {
        ++result.skipped;
      }
    }
    add_unique(x_pool, label);
  }

  if (result.h > 0) {
    result.scored = true;
    double sum_t = 0, sum_x = 0, sum_k = 0;
    for (double v : result.sims_t) sum_t += v;
    for (double v : result.sims_x) sum_x += v;
    for (double v : result.sims_k) sum_k += v;
    result.t = sum_t / result.h;
    result.x = sum_x / result.h;
    result.k = sum_k / result.h;
    if (result.x != 0.0) result.t_over_x = result.t / result.x;
    if (result.k != 0.0) result.x_over_k = result.x / result.k;
    result.avg = (result.t + result.x + result.k) / 3.0;
  }
  return result;
}

}  // namespace caos::reference
