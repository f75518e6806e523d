#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "caos/gateway.hpp"
#include "caos/lexicon.hpp"

namespace caos {

enum class Vote { present, absent };

const char* vote_name(Vote v);

/// Exact question sent to every panel member; bump the version whenever the
/// wording changes so cached verdicts are invalidated.
std::string presence_query(const ObjectLabel& object);
inline constexpr const char* kPresenceTemplateVersion = "presence-v1";

/// Case-insensitive token scan for "present"/"absent". Exactly one found ->
/// that vote; both, neither or a failed request coerce to absent.
Vote normalize_presence_reply(const std::string& reply, bool* parseable = nullptr);

/// One member's vote on one (image, object) pair. Transport errors never
/// surface: after retries they coerce to absent with a logged incident.
Vote query_presence(Gateway& gateway, const EndpointDescriptor& member,
                    const ImageRef& image, const ObjectLabel& object);

/// Majority decision; ties break to absent. Throws on an empty vote list.
Vote ensemble_verdict(const std::vector<Vote>& votes);

struct PresenceVerdict {
  ObjectLabel object;
  std::string image_id;
  std::vector<std::pair<std::string, Vote>> member_votes;
  Vote decision = Vote::absent;
  bool cached = false;
};

/// Append-only store of member votes keyed by
/// sha256(image id | object | member | template version), so verdicts are
/// replayable and invalidated when the query template changes.
class VerdictCache {
 public:
  explicit VerdictCache(std::filesystem::path path);

  static std::string member_key(const std::string& image_id,
                                const ObjectLabel& object,
                                const std::string& member,
                                const std::string& template_version);

  std::optional<Vote> lookup(const std::string& member_key) const;
  void put(const std::string& image_id, const ObjectLabel& object,
           const std::string& member, const std::string& template_version,
           Vote vote, Vote decision);

  std::size_t size() const;
  std::uint64_t hits() const;
  std::uint64_t misses() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Vote> votes_;
  mutable std::atomic<std::uint64_t> hits_{0};
  mutable std::atomic<std::uint64_t> misses_{0};
};

/// The ensemble of vision endpoints that decides presence/absence of
/// out-of-domain objects, fronted by the verdict cache.
class OraclePanel {
 public:
  OraclePanel(Gateway& gateway, std::vector<EndpointDescriptor> members,
              VerdictCache* cache);

  PresenceVerdict verdict(const ImageRef& image, const ObjectLabel& object);

  std::size_t member_count() const { return members_.size(); }
  std::uint64_t queries_sent() const { return queries_sent_; }

 private:
  Gateway& gateway_;
  std::vector<EndpointDescriptor> members_;
  VerdictCache* cache_;
  std::atomic<std::uint64_t> queries_sent_{0};
};

/// Builds the map M: mention -> {0,1}. In-domain mentions are labeled from
/// ground truth; out-of-domain mentions through the oracle panel. The panel
/// may be null only when no out-of-domain mention exists.
std::vector<int> label_mentions(const std::vector<ObjectMention>& mentions,
                                const std::set<ObjectLabel>& ground_truth,
                                OraclePanel* panel, const ImageRef& image);

}  // namespace caos
