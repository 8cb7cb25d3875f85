#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>

#include "coughnet/model.hpp"

namespace coughnet {

inline constexpr std::size_t kMaxWavBytes = 10u << 20;
/// Transport cap; large enough for a base64-encoded 10 MiB WAV plus JSON.
inline constexpr std::size_t kMaxBodyBytes = 16u << 20;

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Request handlers independent of the HTTP transport. The model is
/// installed once and then only read; handlers are safe to call
/// concurrently.
class InferenceService {
 public:
  InferenceService() = default;
  explicit InferenceService(EnsembleModel model) { install(std::move(model)); }

  void install(EnsembleModel model);
  bool ready() const;

  /// 200 {"status":"ok","model_version":...} once a model is installed, 503 before.
  HttpResponse health() const;

  /// JSON body: {"audio_base64": str, "respiratory_condition": 0|1,
  /// "fever_or_myalgia": 0|1}.
  HttpResponse predict_json(std::string_view body) const;

  /// Decoded request. Flags must be 0 or 1. 413 over kMaxWavBytes; 400 with
  /// {"error": code} for malformed input or unsupported audio.
  HttpResponse predict(std::span<const std::uint8_t> wav, long long respiratory_condition,
                       long long fever_or_myalgia) const;

 private:
  std::shared_ptr<const EnsembleModel> snapshot() const;

  mutable std::mutex mu_;
  std::shared_ptr<const EnsembleModel> model_;
};

HttpResponse error_response(int status, std::string_view code, std::string_view message);

/// POST /predict (JSON or multipart/form-data with an "audio" file part and
/// flag fields) and GET /healthz over HTTP/1.1.
class HttpServer {
 public:
  explicit HttpServer(const InferenceService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and starts serving on a background thread; port 0 picks a free
  /// port. Returns the bound port. Throws io_failure if binding fails.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace coughnet
