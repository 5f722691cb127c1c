#pragma once

#include <sstream>
#include <stdexcept>

namespace fssd {

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace fssd

// Precondition/shape checks. The stream argument lets call sites build messages lazily.
#define FSSD_CHECK(cond, ...)                  \
  do {                                         \
    if (!(cond)) {                             \
      std::ostringstream oss_;                 \
      oss_ << __VA_ARGS__;                     \
      ::fssd::fail(oss_.str());                \
    }                                          \
  } while (0)
