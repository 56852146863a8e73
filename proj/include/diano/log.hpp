#pragma once

/// @file log.hpp
/// @brief Process-wide sink for non-fatal warnings.

#include <functional>
#include <iostream>
#include <string>

namespace diano {

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

/// Swaps the warning sink for the lifetime of the guard.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink) : saved_(std::move(warning_sink())) {
    warning_sink() = std::move(sink);
  }
  ~ScopedWarningSink() { warning_sink() = std::move(saved_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink saved_;
};

}  // namespace diano
