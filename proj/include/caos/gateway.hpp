#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caos/errors.hpp"

namespace caos {

enum class EndpointRole { captioner, extractor, oracle_member, embedder };

const char* endpoint_role_name(EndpointRole role);
EndpointRole endpoint_role_from_name(const std::string& name);

struct EndpointDescriptor {
  std::string name;
  std::string base_url;
  std::string auth_env;  // environment variable holding the bearer token
  EndpointRole role = EndpointRole::captioner;
  double timeout_s = 30.0;
  int max_retries = 2;            // retries after the first attempt
  int max_concurrency = 4;        // in-flight requests
  double requests_per_second = 0; // 0 = unlimited

  void validate() const;
};

/// An image passed to a vision endpoint: http(s)/data locators travel as
/// URLs, existing local files are inlined as base64, anything else is
/// forwarded verbatim (useful for scripted transports).
struct ImageRef {
  std::string id;
  std::string locator;
};

struct ChatTurn {
  enum class Role { system, user, assistant } role = Role::user;
  std::string text;
  std::optional<ImageRef> image;

  static ChatTurn system_turn(std::string text);
  static ChatTurn user_turn(std::string text,
                            std::optional<ImageRef> image = std::nullopt);
  static ChatTurn assistant_turn(std::string text);
};

struct Decoding {
  double temperature = 0.0;
  int max_tokens = 256;
  std::uint64_t seed = 0;
};

/// Raw transport result before retry policy is applied. `error` non-empty
/// means the request never produced an HTTP status (timeout, refused, ...).
struct TransportResult {
  int status = 0;
  std::string body;
  std::string error;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual TransportResult post_json(const EndpointDescriptor& endpoint,
                                    const std::string& path,
                                    const std::string& body) = 0;
};

std::shared_ptr<ChatTransport> make_http_transport();

/// Deterministic scripted transport for tests and fixture runs. The handler
/// receives the parsed request body and returns the assistant text (or, for
/// embedding requests, is not used -- see embed_handler).
class MockTransport final : public ChatTransport {
 public:
  using ChatHandler = std::function<std::string(const EndpointDescriptor&,
                                                const nlohmann::json& request)>;
  using EmbedHandler = std::function<std::vector<std::vector<double>>(
      const EndpointDescriptor&, const std::vector<std::string>& texts)>;

  explicit MockTransport(ChatHandler handler);
  void set_embed_handler(EmbedHandler handler);

  /// The next `count` requests to `endpoint_name` return `status` with an
  /// empty body (0 status = transport-level failure).
  void script_failures(const std::string& endpoint_name, int count, int status);

  TransportResult post_json(const EndpointDescriptor& endpoint,
                            const std::string& path,
                            const std::string& body) override;

  std::uint64_t calls() const { return calls_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }

 private:
  ChatHandler handler_;
  EmbedHandler embed_handler_;
  std::mutex mutex_;
  std::map<std::string, std::pair<int, int>> failures_;  // name -> (left, status)
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

/// Append-only (endpoint, request hash, request, reply) log. Record mode
/// appends after every successful call; replay mode serves replies by hash
/// without touching the network.
class TranscriptStore {
 public:
  explicit TranscriptStore(std::filesystem::path path);

  std::optional<std::string> lookup(const std::string& request_hash) const;
  void append(const std::string& endpoint, const std::string& request_hash,
              const std::string& request_body, const std::string& reply);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::string> replies_;
};

enum class GatewayMode { live, record, replay };

GatewayMode gateway_mode_from_name(const std::string& name);
const char* gateway_mode_name(GatewayMode mode);

struct GatewayOptions {
  GatewayMode mode = GatewayMode::live;
  /// Injectable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep_fn;
  std::chrono::milliseconds backoff_base{200};
  std::chrono::milliseconds backoff_cap{5000};
};

/// Uniform client for all remote model endpoints. One wire contract (a
/// message-list chat completion plus an embeddings route) serves captioner,
/// extractor, oracle and embedder roles.
class Gateway {
 public:
  Gateway(GatewayOptions options, std::shared_ptr<ChatTransport> transport,
          std::shared_ptr<TranscriptStore> transcripts = nullptr);
  ~Gateway();

  /// First generated text for the conversation. Retries timeouts/5xx/429
  /// with exponential backoff; other 4xx fail immediately.
  std::string chat_complete(const EndpointDescriptor& endpoint,
                            const std::vector<ChatTurn>& turns,
                            const Decoding& decoding);

  /// Single user turn carrying the image and the instruction; the caption
  /// comes back verbatim apart from surrounding whitespace.
  std::string generate_caption(const EndpointDescriptor& endpoint,
                               const ImageRef& image,
                               const std::string& instruction,
                               const Decoding& decoding);

  /// One vector per input text, in order.
  std::vector<std::vector<double>> embed_texts(const EndpointDescriptor& endpoint,
                                               const std::vector<std::string>& texts);

  std::uint64_t network_calls() const { return network_calls_.load(); }
  std::uint64_t transcript_hits() const { return transcript_hits_.load(); }
  GatewayMode mode() const { return options_.mode; }

  static nlohmann::json build_chat_request(const std::vector<ChatTurn>& turns,
                                           const Decoding& decoding);
  static std::string request_hash(const std::string& endpoint_name,
                                  const nlohmann::json& request);

 private:
  struct EndpointGate;

  std::string dispatch(const EndpointDescriptor& endpoint, const std::string& path,
                       const nlohmann::json& request);
  EndpointGate& gate_for(const EndpointDescriptor& endpoint);

  GatewayOptions options_;
  std::shared_ptr<ChatTransport> transport_;
  std::shared_ptr<TranscriptStore> transcripts_;
  std::mutex gates_mutex_;
  std::map<std::string, std::unique_ptr<EndpointGate>> gates_;
  std::atomic<std::uint64_t> network_calls_{0};
  std::atomic<std::uint64_t> transcript_hits_{0};
};

/// Hex SHA-256; used for request hashes, verdict cache keys and manifest
/// fingerprints.
std::string sha256_hex(std::string_view data);

}  // namespace caos
