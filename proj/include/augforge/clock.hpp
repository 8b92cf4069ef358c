#pragma once

#include <chrono>
#include <cstdint>
#include <functional>

namespace augforge {

/// Milliseconds since the Unix epoch. Injected wherever timestamps are stored
/// so tests and replays can pin them.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

inline Clock fixed_clock(std::int64_t t) {
  return [t] { return t; };
}

}  // namespace augforge
