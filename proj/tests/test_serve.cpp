#include <doctest.h>

#include <httplib.h>

#include <future>
#include <nlohmann/json.hpp>
#include <numbers>
#include <set>

#include "coughnet/audio_io.hpp"
#include "coughnet/model.hpp"
#include "coughnet/serve.hpp"
#include "coughnet/util.hpp"
#include "support.hpp"

using namespace coughnet;
using nlohmann::json;

namespace {

// Plain RFC 4648 encoder kept separate from the library codec.
std::string to_base64(const std::vector<std::uint8_t>& in) {
  static const char* abc = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const unsigned v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    for (int s : {18, 12, 6, 0}) out += abc[(v >> s) & 63];
  }
  if (i + 1 == in.size()) {
    const unsigned v = in[i] << 16;
    out += abc[(v >> 18) & 63];
    out += abc[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    const unsigned v = (in[i] << 16) | (in[i + 1] << 8);
    for (int s : {18, 12, 6}) out += abc[(v >> s) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> tone_wav(double hz, int rate = 16000, double seconds = 1.0) {
  AudioClip c{std::vector<double>(static_cast<std::size_t>(rate * seconds)), rate};
  for (std::size_t i = 0; i < c.size(); ++i) {
    c.samples[i] = 0.4 * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  }
  return encode_wav(c);
}

std::string request_body(const std::vector<std::uint8_t>& wav, json resp = 0, json fever = 1) {
  return json{{"audio_base64", to_base64(wav)}, {"respiratory_condition", resp}, {"fever_or_myalgia", fever}}
      .dump();
}

const std::vector<std::uint8_t> kMp3{'I', 'D', '3', 4, 0, 0, 0, 0, 0, 0, 0xFF, 0xFB, 0x90, 0x64};

InferenceService& service() {
  static InferenceService svc = [] {
    test_support::TempDir dir("serve-model");
    EnsembleModel m = EnsembleModel::build({}, 31);
    save_model(m, dir / "m.cghm");
    return InferenceService(load_model(dir / "m.cghm"));
  }();
  return svc;
}

}  // namespace

TEST_CASE("test base64 encoder agrees with the library decoder") {
  for (std::size_t n : {0, 1, 2, 3, 4, 5, 100}) {
    std::vector<std::uint8_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint8_t>(i * 37 + 11);
    CHECK(base64_decode(to_base64(v)) == v);
    CHECK(base64_encode(v) == to_base64(v));
  }
}

TEST_CASE("health before and after model install") {
  InferenceService empty;
  CHECK(empty.health().status == 503);
  CHECK_FALSE(empty.ready());
  CHECK(empty.predict(tone_wav(440), 0, 0).status == 503);
  const HttpResponse ok = service().health();
  CHECK(ok.status == 200);
  const json j = json::parse(ok.body);
  CHECK(j.at("status") == "ok");
  CHECK(j.at("model_version").get<std::string>().starts_with("cghm1-"));
}

TEST_CASE("predict contract") {
  const HttpResponse r = service().predict_json(request_body(tone_wav(440)));
  REQUIRE(r.status == 200);
  const json j = json::parse(r.body);
  const double p = j.at("probability");
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(j.at("label") == (p >= 0.5 ? "positive" : "negative"));
  CHECK(j.at("feature_digest").get<std::string>().size() == 64);
  CHECK(service().predict_json(request_body(tone_wav(440))).body == r.body);

  const HttpResponse mp3 = service().predict_json(request_body(kMp3));
  CHECK(mp3.status == 400);
  CHECK(json::parse(mp3.body).at("error") == "unsupported_codec");

  for (const auto& [resp, fever] : std::vector<std::pair<json, json>>{{2, 0}, {0, -1}, {"yes", 0}, {0.5, 1}}) {
    const HttpResponse bad = service().predict_json(request_body(tone_wav(440), resp, fever));
    CHECK(bad.status == 400);
    CHECK(json::parse(bad.body).at("error") == "invalid_flag");
  }
  CHECK(service().predict_json(json{{"audio_base64", to_base64(tone_wav(440))}}.dump()).status == 400);

  for (const char* body : {"", "{", "[]", "{\"audio_base64\": 3}", "{\"audio_base64\": \"@@@@\"}"}) {
    const HttpResponse bad = service().predict_json(body);
    CHECK(bad.status == 400);
    CHECK(json::parse(bad.body).at("error") == "malformed_body");
  }
  CHECK(json::parse(service().predict(std::vector<std::uint8_t>{1, 2, 3}, 0, 0).body).at("error") ==
        "malformed_container");
}

TEST_CASE("oversize WAV is rejected with 413") {
  std::vector<std::uint8_t> big(kMaxWavBytes + 1, 0);
  CHECK(service().predict(big, 0, 0).status == 413);
  const HttpResponse r = service().predict_json(request_body(big));
  CHECK(r.status == 413);
  CHECK(json::parse(r.body).at("error") == "payload_too_large");
  std::vector<std::uint8_t> at_cap(kMaxWavBytes, 0);
  CHECK(service().predict(at_cap, 0, 0).status == 400);
}

TEST_CASE("handlers are stateless") {
  Rng rng(32);
  std::vector<std::string> bodies;
  for (int i = 0; i < 6; ++i) {
    bodies.push_back(request_body(tone_wav(200.0 + 500.0 * i, i % 2 ? 22050 : 8000, 0.5), i % 2, (i / 2) % 2));
  }
  std::vector<std::string> serial;
  for (const auto& b : bodies) serial.push_back(service().predict_json(b).body);
  for (int k = 0; k < 30; ++k) {
    const std::size_t i = rng.below(bodies.size());
    CHECK(service().predict_json(bodies[i]).body == serial[i]);
  }
}

TEST_CASE("http transport") {
  HttpServer server(service());
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(60, 0);

  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);

  const std::string body = request_body(tone_wav(880));
  auto ok = cli.Post("/predict", body, "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(ok->body == service().predict_json(body).body);

  auto mp3 = cli.Post("/predict", request_body(kMp3), "application/json");
  REQUIRE(mp3);
  CHECK(mp3->status == 400);
  CHECK(json::parse(mp3->body).at("error") == "unsupported_codec");

  auto big = cli.Post("/predict", request_body(std::vector<std::uint8_t>(kMaxWavBytes + 1024, 7)),
                      "application/json");
  REQUIRE(big);
  CHECK(big->status == 413);

  auto huge = cli.Post("/predict", std::string(kMaxBodyBytes + 10, 'a'), "application/json");
  if (huge) CHECK(huge->status == 413);

  const auto wav = tone_wav(880);
  httplib::MultipartFormDataItems items{
      {"audio", std::string(wav.begin(), wav.end()), "clip.wav", "audio/wav"},
      {"respiratory_condition", "0", "", ""},
      {"fever_or_myalgia", "1", "", ""}};
  auto multi = cli.Post("/predict", items);
  REQUIRE(multi);
  CHECK(multi->status == 200);
  CHECK(json::parse(multi->body).at("probability") == json::parse(ok->body).at("probability"));

  SUBCASE("50 concurrent identical requests") {
    std::vector<std::future<std::string>> futures;
    for (int i = 0; i < 50; ++i) {
      futures.push_back(std::async(std::launch::async, [&] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(120, 0);
        auto r = c.Post("/predict", body, "application/json");
        if (!r || r->status != 200) return std::string("failed");
        return json::parse(r->body).at("probability").dump();
      }));
    }
    std::set<std::string> distinct;
    for (auto& f : futures) distinct.insert(f.get());
    CHECK(distinct.size() == 1);
    CHECK_FALSE(distinct.contains("failed"));
  }
  server.stop();
}
