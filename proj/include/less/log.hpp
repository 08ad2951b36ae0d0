#pragma once

#include <chrono>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace less::log {

/// Progress messages on stderr, prefixed with seconds since first use.
/// Silenced by set_quiet(true).
inline bool& quiet_flag() {
  static bool q = false;
  return q;
}
inline void set_quiet(bool q) { quiet_flag() = q; }

inline void emit(const std::string& line) {
  static const auto t0 = std::chrono::steady_clock::now();
  static std::mutex mu;
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream prefix;
  prefix << '[' << std::fixed << std::setprecision(1) << std::setw(7) << t << "s] ";
  std::lock_guard lock(mu);
  std::cerr << prefix.str() << line << '\n';
}

template <class... Args>
void info(const Args&... args) {
  if (quiet_flag()) return;
  std::ostringstream os;
  os << std::setprecision(5);
  (os << ... << args);
  emit(os.str());
}

}  // namespace less::log
