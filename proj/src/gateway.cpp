#include "caos/gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "caos/text.hpp"

namespace caos {

using nlohmann::json;

const char* endpoint_role_name(EndpointRole role) {
  switch (role) {
    case EndpointRole::captioner: return "captioner";
    case EndpointRole::extractor: return "extractor";
    case EndpointRole::oracle_member: return "oracle-member";
    case EndpointRole::embedder: return "embedder";
  }
  return "unknown";
}

EndpointRole endpoint_role_from_name(const std::string& name) {
  if (name == "captioner") return EndpointRole::captioner;
  if (name == "extractor") return EndpointRole::extractor;
  if (name == "oracle-member") return EndpointRole::oracle_member;
  if (name == "embedder") return EndpointRole::embedder;
  throw Error(Errc::config, "unknown endpoint role: '" + name + "'");
}

void EndpointDescriptor::validate() const {
  if (name.empty()) throw Error(Errc::config, "endpoint with empty name");
  if (timeout_s <= 0) {
    throw Error(Errc::config, "endpoint '" + name + "': timeout must be > 0");
  }
  if (max_retries < 0) {
    throw Error(Errc::config, "endpoint '" + name + "': retries must be >= 0");
  }
  if (max_concurrency < 1) {
    throw Error(Errc::config, "endpoint '" + name + "': concurrency must be >= 1");
  }
  if (requests_per_second < 0) {
    throw Error(Errc::config, "endpoint '" + name + "': rate ceiling must be >= 0");
  }
}

ChatTurn ChatTurn::system_turn(std::string text) {
  return ChatTurn{Role::system, std::move(text), std::nullopt};
}

ChatTurn ChatTurn::user_turn(std::string text, std::optional<ImageRef> image) {
  return ChatTurn{Role::user, std::move(text), std::move(image)};
}

ChatTurn ChatTurn::assistant_turn(std::string text) {
  return ChatTurn{Role::assistant, std::move(text), std::nullopt};
}

GatewayMode gateway_mode_from_name(const std::string& name) {
  if (name == "live") return GatewayMode::live;
  if (name == "record") return GatewayMode::record;
  if (name == "replay") return GatewayMode::replay;
  throw Error(Errc::config, "unknown gateway mode: '" + name + "'");
}

const char* gateway_mode_name(GatewayMode mode) {
  switch (mode) {
    case GatewayMode::live: return "live";
    case GatewayMode::record: return "record";
    case GatewayMode::replay: return "replay";
  }
  return "unknown";
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

const std::string kChatPath = "/v1/chat/completions";
const std::string kEmbedPath = "/v1/embeddings";

std::string media_type_for(const std::filesystem::path& p) {
  const std::string ext = text::to_lower(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

std::string base64_encode(std::string_view data) {
  static const char* table =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= data.size()) {
    const unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                       (static_cast<unsigned char>(data[i + 1]) << 8) |
                       static_cast<unsigned char>(data[i + 2]);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back(table[v & 63]);
    i += 3;
  }
  const std::size_t rest = data.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(data[i]) << 16;
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                       (static_cast<unsigned char>(data[i + 1]) << 8);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string image_url_for(const ImageRef& image) {
  const std::string& loc = image.locator;
  if (loc.rfind("http://", 0) == 0 || loc.rfind("https://", 0) == 0 ||
      loc.rfind("data:", 0) == 0) {
    return loc;
  }
  std::error_code ec;
  if (std::filesystem::exists(loc, ec)) {
    std::ifstream in(loc, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return "data:" + media_type_for(loc) + ";base64," + base64_encode(bytes);
  }
  return loc;  // opaque fixture locator
}

bool retriable(const TransportResult& r) {
  if (!r.error.empty()) return true;  // timeout / connection failure
  return r.status == 429 || (r.status >= 500 && r.status < 600);
}

}  // namespace

// ---------------------------------------------------------------------------
// Transports

namespace {

class HttpTransport final : public ChatTransport {
 public:
  TransportResult post_json(const EndpointDescriptor& endpoint,
                            const std::string& path,
                            const std::string& body) override {
    httplib::Client client(endpoint.base_url);
    const auto timeout =
        std::chrono::milliseconds(static_cast<int>(endpoint.timeout_s * 1000));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (!endpoint.auth_env.empty()) {
      if (const char* token = std::getenv(endpoint.auth_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
      }
    }
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      return TransportResult{0, "", httplib::to_string(res.error())};
    }
    return TransportResult{res->status, res->body, ""};
  }
};

}  // namespace

std::shared_ptr<ChatTransport> make_http_transport() {
  return std::make_shared<HttpTransport>();
}

MockTransport::MockTransport(ChatHandler handler) : handler_(std::move(handler)) {}

void MockTransport::set_embed_handler(EmbedHandler handler) {
  embed_handler_ = std::move(handler);
}

void MockTransport::script_failures(const std::string& endpoint_name, int count,
                                    int status) {
  std::lock_guard lock(mutex_);
  failures_[endpoint_name] = {count, status};
}

TransportResult MockTransport::post_json(const EndpointDescriptor& endpoint,
                                         const std::string& path,
                                         const std::string& body) {
  calls_.fetch_add(1);
  const int now = in_flight_.fetch_add(1) + 1;
  int seen = max_in_flight_.load();
  while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
  }
  struct Release {
    std::atomic<int>& counter;
    ~Release() { counter.fetch_sub(1); }
  } release{in_flight_};

  {
    std::lock_guard lock(mutex_);
    auto it = failures_.find(endpoint.name);
    if (it != failures_.end() && it->second.first > 0) {
      --it->second.first;
      const int status = it->second.second;
      if (status == 0) return TransportResult{0, "", "scripted transport failure"};
      return TransportResult{status, "scripted failure", ""};
    }
  }

  const json request = json::parse(body);
  json response;
  if (path == kEmbedPath) {
    if (!embed_handler_) {
      return TransportResult{500, "no embed handler scripted", ""};
    }
    std::vector<std::string> texts = request.at("input").get<std::vector<std::string>>();
    json data = json::array();
    std::size_t index = 0;
    for (auto& vec : embed_handler_(endpoint, texts)) {
      data.push_back(json{{"index", index++}, {"embedding", vec}});
    }
    response["data"] = std::move(data);
  } else {
    const std::string reply = handler_(endpoint, request);
    response["choices"] = json::array(
        {json{{"message", json{{"role", "assistant"}, {"content", reply}}}}});
  }
  return TransportResult{200, response.dump(), ""};
}

// ---------------------------------------------------------------------------
// Transcripts

TranscriptStore::TranscriptStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) continue;
    replies_[rec.at("request_hash").get<std::string>()] =
        rec.at("reply").get<std::string>();
  }
}

std::optional<std::string> TranscriptStore::lookup(const std::string& request_hash) const {
  std::shared_lock lock(mutex_);
  auto it = replies_.find(request_hash);
  if (it == replies_.end()) return std::nullopt;
  return it->second;
}

void TranscriptStore::append(const std::string& endpoint,
                             const std::string& request_hash,
                             const std::string& request_body,
                             const std::string& reply) {
  std::unique_lock lock(mutex_);
  if (replies_.count(request_hash)) return;
  replies_[request_hash] = reply;
  std::ofstream out(path_, std::ios::app);
  json rec;
  rec["endpoint"] = endpoint;
  rec["request_hash"] = request_hash;
  rec["request"] = request_body;
  rec["reply"] = reply;
  out << rec.dump() << "\n";
}

std::size_t TranscriptStore::size() const {
  std::shared_lock lock(mutex_);
  return replies_.size();
}

// ---------------------------------------------------------------------------
// Gateway

/// Per-endpoint concurrency semaphore + request pacing.
struct Gateway::EndpointGate {
  explicit EndpointGate(const EndpointDescriptor& d)
      : slots(d.max_concurrency),
        min_interval(d.requests_per_second > 0
                         ? std::chrono::duration<double>(1.0 / d.requests_per_second)
                         : std::chrono::duration<double>(0)) {}

  void acquire() {
    std::unique_lock lock(mutex);
    cv.wait(lock, [&] { return slots > 0; });
    --slots;
  }
  void release() {
    {
      std::lock_guard lock(mutex);
      ++slots;
    }
    cv.notify_one();
  }
  void pace() {
    if (min_interval.count() == 0) return;
    std::chrono::steady_clock::time_point wait_until;
    {
      std::lock_guard lock(mutex);
      const auto now = std::chrono::steady_clock::now();
      if (next_start < now) next_start = now;
      wait_until = next_start;
      next_start += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          min_interval);
    }
    std::this_thread::sleep_until(wait_until);
  }

  std::mutex mutex;
  std::condition_variable cv;
  int slots;
  std::chrono::duration<double> min_interval;
  std::chrono::steady_clock::time_point next_start{};
};

Gateway::Gateway(GatewayOptions options, std::shared_ptr<ChatTransport> transport,
                 std::shared_ptr<TranscriptStore> transcripts)
    : options_(std::move(options)),
      transport_(std::move(transport)),
      transcripts_(std::move(transcripts)) {
  if (!options_.sleep_fn) {
    options_.sleep_fn = [](std::chrono::milliseconds d) {
      std::this_thread::sleep_for(d);
    };
  }
  if (options_.mode == GatewayMode::replay && !transcripts_) {
    throw Error(Errc::config, "replay mode requires a transcript store");
  }
}

Gateway::~Gateway() = default;

Gateway::EndpointGate& Gateway::gate_for(const EndpointDescriptor& endpoint) {
  std::lock_guard lock(gates_mutex_);
  auto it = gates_.find(endpoint.name);
  if (it == gates_.end()) {
    it = gates_.emplace(endpoint.name, std::make_unique<EndpointGate>(endpoint)).first;
  }
  return *it->second;
}

json Gateway::build_chat_request(const std::vector<ChatTurn>& turns,
                                 const Decoding& decoding) {
  json messages = json::array();
  for (const ChatTurn& turn : turns) {
    if (turn.text.empty() && !turn.image) {
      throw Error(Errc::invalid_input, "chat turn with neither text nor image");
    }
    if (turn.role == ChatTurn::Role::assistant && turn.image) {
      throw Error(Errc::invalid_input, "assistant turns cannot carry images");
    }
    json msg;
    msg["role"] = turn.role == ChatTurn::Role::system     ? "system"
                  : turn.role == ChatTurn::Role::user     ? "user"
                                                          : "assistant";
    if (turn.image) {
      json content = json::array();
      if (!turn.text.empty()) {
        content.push_back(json{{"type", "text"}, {"text", turn.text}});
      }
      content.push_back(json{
          {"type", "image_url"},
          {"image_url", json{{"url", image_url_for(*turn.image)}}}});
      msg["content"] = std::move(content);
    } else {
      msg["content"] = turn.text;
    }
    messages.push_back(std::move(msg));
  }
  json request;
  request["messages"] = std::move(messages);
  request["temperature"] = decoding.temperature;
  request["max_tokens"] = decoding.max_tokens;
  request["seed"] = decoding.seed;
  return request;
}

std::string Gateway::request_hash(const std::string& endpoint_name,
                                  const json& request) {
  return sha256_hex(endpoint_name + "\n" + request.dump());
}

std::string Gateway::dispatch(const EndpointDescriptor& endpoint,
                              const std::string& path, const json& request) {
  endpoint.validate();
  const std::string body = request.dump();
  const std::string hash = request_hash(endpoint.name, request);

  if (transcripts_) {
    if (auto reply = transcripts_->lookup(hash)) {
      transcript_hits_.fetch_add(1);
      return *reply;
    }
    if (options_.mode == GatewayMode::replay) {
      throw Error(Errc::gateway, "replay mode: no transcript for request to '" +
                                     endpoint.name + "' (hash " + hash + ")");
    }
  }

  EndpointGate& gate = gate_for(endpoint);
  gate.acquire();
  struct Release {
    EndpointGate& gate;
    ~Release() { gate.release(); }
  } release{gate};

  TransportResult result;
  const int attempts = endpoint.max_retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      auto delay = options_.backoff_base * (1 << (attempt - 1));
      options_.sleep_fn(std::min<std::chrono::milliseconds>(delay, options_.backoff_cap));
    }
    gate.pace();
    network_calls_.fetch_add(1);
    result = transport_->post_json(endpoint, path, body);
    if (result.error.empty() && result.status == 200) {
      std::string reply;
      try {
        const json response = json::parse(result.body);
        if (path == kEmbedPath) {
          reply = result.body;  // callers parse the vector payload
        } else {
          reply = response.at("choices").at(0).at("message").at("content")
                      .get<std::string>();
        }
      } catch (const json::exception& e) {
        throw Error(Errc::gateway, "endpoint '" + endpoint.name +
                                       "': malformed response: " + e.what());
      }
      if (transcripts_ && options_.mode == GatewayMode::record) {
        transcripts_->append(endpoint.name, hash, body, reply);
      }
      return reply;
    }
    if (!retriable(result)) break;
    spdlog::warn("endpoint '{}': attempt {}/{} failed ({})", endpoint.name,
                 attempt + 1, attempts,
                 result.error.empty() ? "HTTP " + std::to_string(result.status)
                                      : result.error);
  }
  throw Error(Errc::gateway,
              "endpoint '" + endpoint.name + "' failed: " +
                  (result.error.empty() ? "HTTP " + std::to_string(result.status)
                                        : result.error));
}

std::string Gateway::chat_complete(const EndpointDescriptor& endpoint,
                                   const std::vector<ChatTurn>& turns,
                                   const Decoding& decoding) {
  return dispatch(endpoint, kChatPath, build_chat_request(turns, decoding));
}

std::string Gateway::generate_caption(const EndpointDescriptor& endpoint,
                                      const ImageRef& image,
                                      const std::string& instruction,
                                      const Decoding& decoding) {
  if (instruction.empty()) {
    throw Error(Errc::invalid_input, "generate_caption: empty instruction");
  }
  const std::string reply =
      chat_complete(endpoint, {ChatTurn::user_turn(instruction, image)}, decoding);
  return std::string(text::trim(reply));
}

std::vector<std::vector<double>> Gateway::embed_texts(
    const EndpointDescriptor& endpoint, const std::vector<std::string>& texts) {
  json request;
  request["input"] = texts;
  const std::string raw = dispatch(endpoint, kEmbedPath, request);
  try {
    const json response = json::parse(raw);
    std::vector<std::vector<double>> out;
    out.resize(texts.size());
    for (const auto& item : response.at("data")) {
      const std::size_t index = item.at("index").get<std::size_t>();
      if (index >= out.size()) {
        throw Error(Errc::gateway, "embedder returned out-of-range index");
      }
      out[index] = item.at("embedding").get<std::vector<double>>();
    }
    for (const auto& v : out) {
      if (v.empty()) {
        throw Error(Errc::gateway, "embedder returned fewer vectors than texts");
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(Errc::gateway, "endpoint '" + endpoint.name +
                                   "': malformed embedding response: " + e.what());
  }
}

}  // namespace caos
