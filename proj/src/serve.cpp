#include "coughnet/serve.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "coughnet/error.hpp"
#include "coughnet/util.hpp"

namespace coughnet {
namespace {

using nlohmann::json;

constexpr const char* kJson = "application/json";

// Accepts 0/1 as integers, booleans or digit strings; -1 otherwise.
long long flag_value(const json& v) {
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    return d == 0.0 ? 0 : d == 1.0 ? 1 : -1;
  }
  if (v.is_string()) {
    const std::string s = trim(v.get<std::string>());
    return s == "0" ? 0 : s == "1" ? 1 : -1;
  }
  return -1;
}

long long flag_field(std::string_view text) {
  const std::string s = trim(text);
  return s == "0" || s == "false" ? 0 : s == "1" || s == "true" ? 1 : -1;
}

bool client_error(Errc code) {
  switch (code) {
    case Errc::malformed_container:
    case Errc::unsupported_codec:
    case Errc::empty_audio:
    case Errc::clip_too_short:
    case Errc::invalid_argument:
      return true;
    default:
      return false;
  }
}

}  // namespace

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
  return {status, json{{"error", code}, {"message", message}}.dump()};
}

void InferenceService::install(EnsembleModel model) {
  auto shared = std::make_shared<const EnsembleModel>(std::move(model));
  std::lock_guard lock(mu_);
  model_ = std::move(shared);
}

std::shared_ptr<const EnsembleModel> InferenceService::snapshot() const {
  std::lock_guard lock(mu_);
  return model_;
}

bool InferenceService::ready() const { return snapshot() != nullptr; }

HttpResponse InferenceService::health() const {
  const auto model = snapshot();
  if (!model) return {503, json{{"status", "loading"}}.dump()};
  return {200, json{{"status", "ok"}, {"model_version", model->version_tag()}}.dump()};
}

HttpResponse InferenceService::predict_json(std::string_view body) const {
  if (body.size() > kMaxBodyBytes) return error_response(413, "payload_too_large", "request body too large");
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error_response(400, "malformed_body", e.what());
  }
  if (!req.is_object() || !req.contains("audio_base64") || !req["audio_base64"].is_string()) {
    return error_response(400, "malformed_body", "audio_base64 string is required");
  }
  const std::string& b64 = req["audio_base64"].get_ref<const std::string&>();
  // Decoded size is at most 3/4 of the text; reject early when clearly over.
  if (b64.size() / 4 * 3 > kMaxWavBytes + 2) {
    return error_response(413, "payload_too_large", "WAV exceeds 10 MiB");
  }
  std::vector<std::uint8_t> wav;
  try {
    wav = base64_decode(b64);
  } catch (const Error& e) {
    return error_response(400, "malformed_body", e.what());
  }
  const auto flag = [&](const char* key) {
    return req.contains(key) ? flag_value(req[key]) : -1;
  };
  return predict(wav, flag("respiratory_condition"), flag("fever_or_myalgia"));
}

HttpResponse InferenceService::predict(std::span<const std::uint8_t> wav,
                                       long long respiratory_condition,
                                       long long fever_or_myalgia) const {
  const auto model = snapshot();
  if (!model) return error_response(503, "not_ready", "model not loaded");
  if (wav.size() > kMaxWavBytes) return error_response(413, "payload_too_large", "WAV exceeds 10 MiB");
  for (long long f : {respiratory_condition, fever_or_myalgia}) {
    if (f != 0 && f != 1) {
      return error_response(400, "invalid_flag",
                            "respiratory_condition and fever_or_myalgia must be 0 or 1");
    }
  }
  try {
    const AudioClip clip = decode_wav(wav);
    const ClinicalFlags flags{respiratory_condition == 1, fever_or_myalgia == 1};
    const FeatureVector fv = extract_features(clip, flags);
    const double p = model->predict(make_batch(std::span<const FeatureVector>(&fv, 1))).front();
    return {200, json{{"probability", p},
                      {"label", p >= 0.5 ? "positive" : "negative"},
                      {"model_version", model->version_tag()},
                      {"feature_digest", sha256_hex(feature_bytes(fv))}}
                     .dump()};
  } catch (const Error& e) {
    if (client_error(e.code())) return error_response(400, errc_name(e.code()), e.what());
    return error_response(500, "internal", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

// Transport ------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(const InferenceService& s) : service(s) {}
  const InferenceService& service;
  httplib::Server server;
};

HttpServer::HttpServer(const InferenceService& service)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  srv.set_payload_max_length(kMaxBodyBytes);
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, kJson);
  };
  srv.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, impl_->service.health());
  });
  srv.Post("/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
    const InferenceService& svc = impl_->service;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("audio")) {
        send(res, error_response(400, "malformed_body", "multipart request needs an 'audio' part"));
        return;
      }
      const auto& audio = req.get_file_value("audio").content;
      auto field = [&](const char* name) {
        return req.has_file(name) ? flag_field(req.get_file_value(name).content) : -1;
      };
      const std::span<const std::uint8_t> bytes(
          reinterpret_cast<const std::uint8_t*>(audio.data()), audio.size());
      send(res, svc.predict(bytes, field("respiratory_condition"), field("fever_or_myalgia")));
      return;
    }
    send(res, svc.predict_json(req.body));
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      res.set_content(error_response(413, "payload_too_large", "request body too large").body, kJson);
    } else if (res.body.empty()) {
      res.set_content(error_response(res.status, "http_error", httplib::status_message(res.status)).body,
                      kJson);
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::io_failure, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::io_failure, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace coughnet
