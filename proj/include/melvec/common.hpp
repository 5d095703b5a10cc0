/* Copyright 2026 The melvec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef MELVEC_COMMON_HPP_
#define MELVEC_COMMON_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace melvec {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all melvec errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement (reports the offending shapes in the message).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-system and format failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checksum / version failures when reading persisted state.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void str_append(std::ostringstream&) {}

template <typename Head, typename... Tail>
void str_append(std::ostringstream& os, Head&& head, Tail&&... tail) {
  os << std::forward<Head>(head);
  str_append(os, std::forward<Tail>(tail)...);
}

}  // namespace detail

/// Builds an error message from heterogeneous parts.
template <typename... Parts>
std::string str_cat(Parts&&... parts) {
  std::ostringstream os;
  detail::str_append(os, std::forward<Parts>(parts)...);
  return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic random numbers
// ---------------------------------------------------------------------------

// std::mt19937_64 has a fully specified state transition, but the standard
// distributions do not, so all conversions from raw draws to floats/ints are
// done here. Identical seeds give bitwise-identical streams on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform double in the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (two raw draws per call).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Standard Gumbel noise: -log(-log(u)), u in (0, 1).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  /// Unbiased uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw Error("Rng::uniform_int: n must be positive");
    const std::uint64_t limit = (UINT64_MAX / n) * n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Text round-trip of the engine state (used by checkpoints).
  std::string serialize_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize_state(const std::string& text) {
    std::istringstream is(text);
    is >> engine_;
    if (is.fail()) throw IntegrityError("Rng: malformed serialized state");
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

// One process-wide worker pool. parallel_for partitions [0, n) into disjoint
// contiguous chunks, one per worker; every output element is produced by
// exactly one thread, so results are bitwise identical for any thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void set_num_threads(int n) {
    std::lock_guard<std::mutex> guard(config_mutex_);
    num_threads_ = n < 1 ? 1 : n;
  }

  int num_threads() const { return num_threads_; }

  void parallel_for(std::size_t n, std::size_t grain,
                    const std::function<void(std::size_t, std::size_t)>& body) {
    const int threads = num_threads_;
    if (threads <= 1 || n < 2 * grain) {
      body(0, n);
      return;
    }
    const std::size_t chunks =
        std::min<std::size_t>(static_cast<std::size_t>(threads),
                              (n + grain - 1) / grain);
    std::vector<std::thread> workers;
    workers.reserve(chunks - 1);
    const std::size_t step = (n + chunks - 1) / chunks;
    for (std::size_t c = 1; c < chunks; ++c) {
      const std::size_t begin = c * step;
      const std::size_t end = std::min(n, begin + step);
      if (begin >= end) break;
      workers.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(n, step));
    for (auto& w : workers) w.join();
  }

 private:
  ThreadPool() = default;
  std::mutex config_mutex_;
  std::atomic<int> num_threads_{1};
};

inline void set_num_threads(int n) { ThreadPool::instance().set_num_threads(n); }
inline int num_threads() { return ThreadPool::instance().num_threads(); }

inline void parallel_for(std::size_t n, std::size_t grain,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  ThreadPool::instance().parallel_for(n, grain, body);
}

}  // namespace melvec

#endif  // MELVEC_COMMON_HPP_
