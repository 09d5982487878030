#pragma once

#include <memory>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace nmt {

// All diagnostics go to stderr so stdout stays a clean data channel.
inline spdlog::logger &logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto existing = spdlog::get("nmt");
    if (existing) return existing;
    auto created = spdlog::stderr_color_mt("nmt");
    created->set_pattern("[%l] %v");
    return created;
  }();
  return *instance;
}

}  // namespace nmt
