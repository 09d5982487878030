#pragma once

// HTTP translation endpoint. The service owns one immutable checkpoint; every
// request decodes against it independently, so concurrent requests need no
// locking beyond the one-time publication of the loaded state.

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

// httplib's default backlog of 5 drops connections under modest bursts.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include "httplib.h"
#include "json.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/log.hpp"
#include "nmt/subword.hpp"
#include "nmt/transformer.hpp"

namespace nmt {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

class TranslationService {
 public:
  explicit TranslationService(size_t max_out = 128) : max_out_(max_out) {}

  void load(const std::filesystem::path &checkpoint, const std::filesystem::path &vocab) {
    install(load_checkpoint(checkpoint), SubwordModel::load(vocab.string()));
  }

  void install(Checkpoint ckpt, SubwordModel vocab) {
    if (ckpt.vocab_hash != vocab.hash()) {
      throw ConfigError("checkpoint vocabulary does not match the subword model");
    }
    auto state = std::make_shared<State>(std::move(ckpt), std::move(vocab));
    std::lock_guard<std::mutex> lock(mutex_);
    state_ = std::move(state);
  }

  bool ready() const { return snapshot() != nullptr; }

  ServiceResponse health() const {
    auto state = snapshot();
    if (!state) return {503, {{"status", "loading"}}};
    return {200, {{"status", "ready"}, {"model_step", state->ckpt.step}}};
  }

  ServiceResponse translate(const std::string &request_body) const {
    auto state = snapshot();
    if (!state) return {503, {{"error", "model is still loading"}}};
    nlohmann::json request = nlohmann::json::parse(request_body, nullptr, false);
    if (request.is_discarded() || !request.is_object()) {
      return {400, {{"error", "request body must be a JSON object"}}};
    }
    for (const char *field : {"text", "src", "tgt"}) {
      if (!request.contains(field) || !request[field].is_string()) {
        return {400, {{"error", std::string("missing string field '") + field + "'"}}};
      }
    }
    std::string text = request["text"];
    std::string src = request["src"];
    std::string tgt = request["tgt"];
    for (const auto &lang : {src, tgt}) {
      if (!state->vocab.has_language(lang)) {
        return {400, {{"error", "language '" + lang + "' is not registered"}}};
      }
    }
    // Control token + content + eos must fit the encoder.
    size_t length = state->vocab.encode(text).size() + 2;
    if (length > state->ckpt.config.max_len) {
      return {413,
              {{"error", "input is " + std::to_string(length) + " tokens; the limit is " +
                             std::to_string(state->ckpt.config.max_len)}}};
    }
    std::string translation = greedy_decode(state->model, state->vocab, text, tgt, max_out_);
    return {200,
            {{"translation", translation},
             {"direction", src + "-" + tgt},
             {"model_step", state->ckpt.step}}};
  }

 private:
  struct State {
    State(Checkpoint c, SubwordModel v)
        : ckpt(std::move(c)), vocab(std::move(v)), model(inference_config(ckpt), ckpt.params) {}
    static ModelConfig inference_config(const Checkpoint &ckpt) {
      ModelConfig config = ckpt.config;
      config.dropout = 0.0;
      return config;
    }
    Checkpoint ckpt;
    SubwordModel vocab;
    Transformer<float> model;
  };

  std::shared_ptr<const State> snapshot() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return state_;
  }

  size_t max_out_;
  mutable std::mutex mutex_;
  std::shared_ptr<const State> state_;
};

// Binds the routes of `service` to an httplib server with a bounded pool.
class HttpFrontend {
 public:
  HttpFrontend(TranslationService &service, size_t threads, size_t max_queued = 64)
      : service_(service) {
    server_.new_task_queue = [threads, max_queued] {
      return new httplib::ThreadPool(threads, max_queued);
    };
    auto reply = [](httplib::Response &res, const ServiceResponse &out) {
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    server_.Get("/health", [this, reply](const httplib::Request &, httplib::Response &res) {
      reply(res, service_.health());
    });
    server_.Post("/translate",
                 [this, reply](const httplib::Request &req, httplib::Response &res) {
                   try {
                     reply(res, service_.translate(req.body));
                   } catch (const InputError &e) {
                     reply(res, {400, {{"error", e.what()}}});
                   } catch (const std::exception &e) {
                     logger().error("translate failed: {}", e.what());
                     reply(res, {500, {{"error", "internal error"}}});
                   }
                 });
  }

  // Returns the bound port (useful with port 0).
  int bind(const std::string &host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }

  bool run() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  TranslationService &service_;
  httplib::Server server_;
};

}  // namespace nmt
