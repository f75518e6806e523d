#include "caos/oracle.hpp"

#include <fstream>

#include <spdlog/spdlog.h>

#include "caos/text.hpp"

namespace caos {

using nlohmann::json;

const char* vote_name(Vote v) { return v == Vote::present ? "present" : "absent"; }

std::string presence_query(const ObjectLabel& object) {
  return "Does the image contain " + object +
         "? Please respond with only Present or Absent.";
}

Vote normalize_presence_reply(const std::string& reply, bool* parseable) {
  bool present = false;
  bool absent = false;
  for (const auto& tok : text::tokenize(reply)) {
    if (tok.lower == "present") present = true;
    if (tok.lower == "absent") absent = true;
  }
  const bool ok = present != absent;
  if (parseable) *parseable = ok;
  if (ok) return present ? Vote::present : Vote::absent;
  return Vote::absent;
}

Vote query_presence(Gateway& gateway, const EndpointDescriptor& member,
                    const ImageRef& image, const ObjectLabel& object) {
  std::string reply;
  try {
    reply = gateway.chat_complete(
        member, {ChatTurn::user_turn(presence_query(object), image)}, Decoding{});
  } catch (const Error& e) {
    spdlog::warn("oracle member '{}' failed for ({}, '{}'): {}; voting absent",
                 member.name, image.id, object, e.what());
    return Vote::absent;
  }
  bool parseable = false;
  const Vote vote = normalize_presence_reply(reply, &parseable);
  if (!parseable) {
    spdlog::warn("oracle member '{}' reply unparseable for ({}, '{}'): '{}'",
                 member.name, image.id, object, reply);
  }
  return vote;
}

Vote ensemble_verdict(const std::vector<Vote>& votes) {
  if (votes.empty()) {
    throw Error(Errc::invalid_input, "ensemble_verdict: no votes");
  }
  std::size_t present = 0;
  for (Vote v : votes) {
    if (v == Vote::present) ++present;
  }
  return 2 * present > votes.size() ? Vote::present : Vote::absent;
}

VerdictCache::VerdictCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) continue;
    const std::string vote = rec.value("vote", "");
    if (vote != "present" && vote != "absent") continue;
    votes_[rec.at("key").get<std::string>()] =
        vote == "present" ? Vote::present : Vote::absent;
  }
}

std::string VerdictCache::member_key(const std::string& image_id,
                                     const ObjectLabel& object,
                                     const std::string& member,
                                     const std::string& template_version) {
  return sha256_hex(image_id + "\x1f" + object + "\x1f" + member + "\x1f" +
                    template_version);
}

std::optional<Vote> VerdictCache::lookup(const std::string& member_key) const {
  std::shared_lock lock(mutex_);
  auto it = votes_.find(member_key);
  if (it == votes_.end()) {
    misses_.fetch_add(1, std::memory_order_relaxed);
    return std::nullopt;
  }
  hits_.fetch_add(1, std::memory_order_relaxed);
  return it->second;
}

void VerdictCache::put(const std::string& image_id, const ObjectLabel& object,
                       const std::string& member, const std::string& template_version,
                       Vote vote, Vote decision) {
  const std::string key = member_key(image_id, object, member, template_version);
  std::unique_lock lock(mutex_);
  if (!votes_.emplace(key, vote).second) return;
  std::ofstream out(path_, std::ios::app);
  json rec;
  rec["key"] = key;
  rec["image_id"] = image_id;
  rec["object"] = object;
  rec["member"] = member;
  rec["template_version"] = template_version;
  rec["vote"] = vote_name(vote);
  rec["decision"] = vote_name(decision);
  rec["ts"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::system_clock::now().time_since_epoch())
                  .count();
  out << rec.dump() << "\n";
}

std::size_t VerdictCache::size() const {
  std::shared_lock lock(mutex_);
  return votes_.size();
}

std::uint64_t VerdictCache::hits() const {
  return hits_.load(std::memory_order_relaxed);
}

std::uint64_t VerdictCache::misses() const {
  return misses_.load(std::memory_order_relaxed);
}

OraclePanel::OraclePanel(Gateway& gateway, std::vector<EndpointDescriptor> members,
                         VerdictCache* cache)
    : gateway_(gateway), members_(std::move(members)), cache_(cache) {
  for (const auto& m : members_) m.validate();
}

PresenceVerdict OraclePanel::verdict(const ImageRef& image, const ObjectLabel& object) {
  if (members_.empty()) {
    throw Error(Errc::config, "oracle panel has no members");
  }
  PresenceVerdict verdict;
  verdict.object = object;
  verdict.image_id = image.id;
  verdict.cached = true;

  std::vector<Vote> votes;
  struct Pending {
    const EndpointDescriptor* member;
    Vote vote;
  };
  std::vector<Pending> fresh;
  for (const auto& member : members_) {
    std::optional<Vote> cached;
    if (cache_) {
      cached = cache_->lookup(VerdictCache::member_key(
          image.id, object, member.name, kPresenceTemplateVersion));
    }
    Vote vote;
    if (cached) {
      vote = *cached;
    } else {
      verdict.cached = false;
      queries_sent_.fetch_add(1);
      vote = query_presence(gateway_, member, image, object);
      fresh.push_back(Pending{&member, vote});
    }
    votes.push_back(vote);
    verdict.member_votes.emplace_back(member.name, vote);
  }
  verdict.decision = ensemble_verdict(votes);
  if (cache_) {
    for (const auto& p : fresh) {
      cache_->put(image.id, object, p.member->name, kPresenceTemplateVersion,
                  p.vote, verdict.decision);
    }
  }
  return verdict;
}

std::vector<int> label_mentions(const std::vector<ObjectMention>& mentions,
                                const std::set<ObjectLabel>& ground_truth,
                                OraclePanel* panel, const ImageRef& image) {
  std::vector<int> labels;
  labels.reserve(mentions.size());
  for (const ObjectMention& m : mentions) {
    if (m.in_domain) {
      labels.push_back(ground_truth.count(m.label) ? 1 : 0);
      continue;
    }
    if (panel == nullptr || panel->member_count() == 0) {
      throw Error(Errc::config,
                  "out-of-domain mention '" + m.label +
                      "' requires an oracle panel, but none is configured");
    }
    labels.push_back(panel->verdict(image, m.label).decision == Vote::present ? 1 : 0);
  }
  return labels;
}

}  // namespace caos
