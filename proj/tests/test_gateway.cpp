#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>
#include <vector>

#include "caos/gateway.hpp"

using namespace caos;

namespace {

EndpointDescriptor endpoint(int retries = 2) {
  EndpointDescriptor d;
  d.name = "ep";
  d.base_url = "http://test.invalid";
  d.role = EndpointRole::captioner;
  d.max_retries = retries;
  d.max_concurrency = 4;
  return d;
}

GatewayOptions no_sleep_options() {
  GatewayOptions options;
  options.sleep_fn = [](std::chrono::milliseconds) {};
  return options;
}

std::shared_ptr<MockTransport> echo_transport(const std::string& reply) {
  return std::make_shared<MockTransport>(
      [reply](const EndpointDescriptor&, const nlohmann::json&) { return reply; });
}

}  // namespace

TEST_CASE("chat_complete returns the scripted reply") {
  auto transport = echo_transport("a dog on a couch");
  Gateway gateway(no_sleep_options(), transport);
  CHECK(gateway.chat_complete(endpoint(), {ChatTurn::user_turn("hi")}, Decoding{}) ==
        "a dog on a couch");
  CHECK(transport->calls() == 1);
}

TEST_CASE("transient failures are retried") {
  SUBCASE("fail twice then succeed within the retry budget") {
    auto transport = echo_transport("ok");
    transport->script_failures("ep", 2, 500);
    Gateway gateway(no_sleep_options(), transport);
    CHECK(gateway.chat_complete(endpoint(3), {ChatTurn::user_turn("hi")}, Decoding{}) ==
          "ok");
    CHECK(transport->calls() == 3);
  }
  SUBCASE("exhausted retries raise a gateway error") {
    auto transport = echo_transport("ok");
    transport->script_failures("ep", 99, 500);
    Gateway gateway(no_sleep_options(), transport);
    try {
      gateway.chat_complete(endpoint(2), {ChatTurn::user_turn("hi")}, Decoding{});
      FAIL("expected gateway error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::gateway);
      CHECK(std::string(e.what()).find("ep") != std::string::npos);
    }
    CHECK(transport->calls() == 3);  // 1 + 2 retries
  }
  SUBCASE("429 and transport-level failures are retriable") {
    auto transport = echo_transport("ok");
    transport->script_failures("ep", 1, 429);
    Gateway gateway(no_sleep_options(), transport);
    CHECK(gateway.chat_complete(endpoint(1), {ChatTurn::user_turn("hi")}, Decoding{}) ==
          "ok");
    transport->script_failures("ep", 1, 0);  // connection-level failure
    CHECK(gateway.chat_complete(endpoint(1), {ChatTurn::user_turn("hi")}, Decoding{}) ==
          "ok");
  }
  SUBCASE("non-retriable 4xx fails immediately") {
    auto transport = echo_transport("ok");
    transport->script_failures("ep", 1, 403);
    Gateway gateway(no_sleep_options(), transport);
    CHECK_THROWS_AS(
        gateway.chat_complete(endpoint(5), {ChatTurn::user_turn("hi")}, Decoding{}),
        Error);
    CHECK(transport->calls() == 1);
  }
}

TEST_CASE("backoff delays are nondecreasing") {
  std::vector<std::chrono::milliseconds> sleeps;
  GatewayOptions options;
  options.sleep_fn = [&sleeps](std::chrono::milliseconds d) { sleeps.push_back(d); };
  auto transport = echo_transport("ok");
  transport->script_failures("ep", 4, 500);
  Gateway gateway(options, transport);
  gateway.chat_complete(endpoint(4), {ChatTurn::user_turn("hi")}, Decoding{});
  REQUIRE(sleeps.size() == 4);
  for (std::size_t i = 1; i < sleeps.size(); ++i) {
    CHECK(sleeps[i] >= sleeps[i - 1]);
  }
}

TEST_CASE("per-endpoint concurrency bound is honored") {
  auto transport = std::make_shared<MockTransport>(
      [](const EndpointDescriptor&, const nlohmann::json&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return "ok";
      });
  Gateway gateway(no_sleep_options(), transport);
  EndpointDescriptor bounded = endpoint();
  bounded.max_concurrency = 2;

  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&gateway, &bounded, i] {
      gateway.chat_complete(bounded,
                            {ChatTurn::user_turn("req " + std::to_string(i))},
                            Decoding{});
    });
  }
  for (auto& t : threads) t.join();
  CHECK(transport->max_in_flight() <= 2);
  CHECK(transport->calls() == 8);
}

TEST_CASE("chat turn validation") {
  CHECK_THROWS_AS(Gateway::build_chat_request({ChatTurn{}}, Decoding{}), Error);
  ChatTurn bad = ChatTurn::assistant_turn("hi");
  bad.image = ImageRef{"x", "fixture://x"};
  CHECK_THROWS_AS(Gateway::build_chat_request({bad}, Decoding{}), Error);
}

TEST_CASE("generate_caption composes image and instruction") {
  nlohmann::json seen;
  auto transport = std::make_shared<MockTransport>(
      [&seen](const EndpointDescriptor&, const nlohmann::json& request) {
        seen = request;
        return "  a cat on a mat \n";
      });
  Gateway gateway(no_sleep_options(), transport);
  const std::string caption =
      gateway.generate_caption(endpoint(), ImageRef{"img1", "fixture://img1"},
                               "Provide a brief description of the given image.",
                               Decoding{});
  CHECK(caption == "a cat on a mat");  // trimmed, otherwise verbatim
  const auto& content = seen.at("messages").at(0).at("content");
  CHECK(content.at(0).at("text") ==
        "Provide a brief description of the given image.");
  CHECK(content.at(1).at("image_url").at("url") == "fixture://img1");
  CHECK_THROWS_AS(gateway.generate_caption(endpoint(), ImageRef{"i", "u"}, "",
                                           Decoding{}),
                  Error);
}

TEST_CASE("transcripts record and replay byte-identically") {
  const auto dir = std::filesystem::temp_directory_path() / "caos_gateway_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = dir / "transcripts.jsonl";

  const std::vector<ChatTurn> turns{ChatTurn::user_turn("describe")};
  std::string recorded;
  {
    auto transport = echo_transport("a scripted caption");
    GatewayOptions options = no_sleep_options();
    options.mode = GatewayMode::record;
    Gateway gateway(options, transport, std::make_shared<TranscriptStore>(path));
    recorded = gateway.chat_complete(endpoint(), turns, Decoding{});
    CHECK(transport->calls() == 1);
    // second identical request served from the transcript even in record mode
    CHECK(gateway.chat_complete(endpoint(), turns, Decoding{}) == recorded);
    CHECK(transport->calls() == 1);
  }
  {
    auto poisoned = std::make_shared<MockTransport>(
        [](const EndpointDescriptor&, const nlohmann::json&) -> std::string {
          throw std::runtime_error("network access in replay mode");
        });
    GatewayOptions options = no_sleep_options();
    options.mode = GatewayMode::replay;
    Gateway gateway(options, poisoned, std::make_shared<TranscriptStore>(path));
    CHECK(gateway.chat_complete(endpoint(), turns, Decoding{}) == recorded);
    CHECK(poisoned->calls() == 0);
    // unseen request in replay mode is an error, not a network call
    CHECK_THROWS_AS(
        gateway.chat_complete(endpoint(), {ChatTurn::user_turn("other")}, Decoding{}),
        Error);
    CHECK(poisoned->calls() == 0);
  }
}

TEST_CASE("committed caption transcript replays byte-identically") {
  const auto path =
      std::filesystem::path(CAOS_TEST_FIXTURES) / "caption_transcript.jsonl";
  REQUIRE(std::filesystem::exists(path));
  auto poisoned = std::make_shared<MockTransport>(
      [](const EndpointDescriptor&, const nlohmann::json&) -> std::string {
        throw std::runtime_error("network access in replay mode");
      });
  GatewayOptions options = no_sleep_options();
  options.mode = GatewayMode::replay;
  Gateway gateway(options, poisoned, std::make_shared<TranscriptStore>(path));

  EndpointDescriptor captioner = endpoint();
  captioner.name = "captioner";
  const std::string caption = gateway.generate_caption(
      captioner, ImageRef{"lake01", "fixture://lake01"},
      "Provide a brief description of the given image.", Decoding{});
  CHECK(caption == "A red kayak rests on the shore of a misty lake at dawn.");
  CHECK(poisoned->calls() == 0);
}

TEST_CASE("requests are paced to the endpoint's rate ceiling") {
  auto transport = echo_transport("ok");
  Gateway gateway(no_sleep_options(), transport);
  EndpointDescriptor paced = endpoint();
  paced.requests_per_second = 200;  // 5 ms spacing

  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) {
    gateway.chat_complete(paced, {ChatTurn::user_turn("hi")}, Decoding{});
  }
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  // first request free, three more at >= 5 ms apart
  CHECK(elapsed.count() >= 15);
  CHECK(transport->calls() == 4);
}

TEST_CASE("embed_texts returns vectors in input order") {
  auto transport = std::make_shared<MockTransport>(nullptr);
  transport->set_embed_handler(
      [](const EndpointDescriptor&, const std::vector<std::string>& texts) {
        std::vector<std::vector<double>> out;
        for (const auto& t : texts) out.push_back({static_cast<double>(t.size())});
        return out;
      });
  Gateway gateway(no_sleep_options(), transport);
  EndpointDescriptor embedder = endpoint();
  embedder.role = EndpointRole::embedder;
  const auto vectors = gateway.embed_texts(embedder, {"ab", "abcd"});
  REQUIRE(vectors.size() == 2);
  CHECK(vectors[0][0] == 2.0);
  CHECK(vectors[1][0] == 4.0);
}

TEST_CASE("request hashes are stable and distinct") {
  const auto r1 = Gateway::build_chat_request({ChatTurn::user_turn("a")}, Decoding{});
  const auto r2 = Gateway::build_chat_request({ChatTurn::user_turn("b")}, Decoding{});
  CHECK(Gateway::request_hash("ep", r1) == Gateway::request_hash("ep", r1));
  CHECK(Gateway::request_hash("ep", r1) != Gateway::request_hash("ep", r2));
  CHECK(Gateway::request_hash("ep", r1) != Gateway::request_hash("other", r1));
}
