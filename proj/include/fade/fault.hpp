#pragma once

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace fade::fault {

// Harness self-test hook. When armed, softmax_channels negates its logits, which
// keeps outputs normalized but breaks every value-level check downstream.
inline std::atomic<bool>& softmax_sign_flip() {
  static std::atomic<bool> flag{[] {
    const char* env = std::getenv("FADE_FAULT_INJECT");
    return env != nullptr && *env != '\0' && std::strcmp(env, "0") != 0;
  }()};
  return flag;
}

inline void arm(bool on = true) { softmax_sign_flip().store(on); }
inline bool armed() { return softmax_sign_flip().load(std::memory_order_relaxed); }

}  // namespace fade::fault
