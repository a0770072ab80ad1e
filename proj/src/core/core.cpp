// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include "avssl/core/error.hpp"
#include "avssl/core/log.hpp"
#include "avssl/core/rng.hpp"
#include "avssl/core/tensor.hpp"

namespace avssl {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
std::string format_len(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}
}  // namespace

InfeasibleClip::InfeasibleClip(std::string strategy, double min_length_s, double length_s)
    : Error("clip of " + format_len(length_s) + " s is too short for the '" + strategy +
            "' strategy, which needs at least " + format_len(min_length_s) + " s"),
      strategy_(std::move(strategy)),
      min_length_s_(min_length_s) {}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(engine_());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % range);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (!is) throw IoError("malformed random-stream state");
}

}  // namespace avssl

namespace avssl {

namespace {
LogSink& sink_ref() {
  static LogSink sink = [](LogLevel level, const std::string& msg) {
    std::cerr << (level == LogLevel::warning ? "warning: " : "") << msg << '\n';
  };
  return sink;
}
}  // namespace

LogSink set_log_sink(LogSink sink) {
  LogSink old = std::move(sink_ref());
  sink_ref() = std::move(sink);
  return old;
}

void log_info(const std::string& msg) {
  if (sink_ref()) sink_ref()(LogLevel::info, msg);
}

void log_warning(const std::string& msg) {
  if (sink_ref()) sink_ref()(LogLevel::warning, msg);
}

}  // namespace avssl
