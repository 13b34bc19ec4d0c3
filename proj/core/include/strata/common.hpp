#pragma once

#include <cstdarg>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace strata {

// Bad inputs, bad config, missing upstream artifacts. CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Failures while executing an otherwise valid request. CLI exit code 2.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string strfmt(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

namespace log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Parsed once from the STRATA_LOG environment variable (error|warn|info|debug).
Level threshold();
void message(Level level, const std::string& text);

inline void error(const std::string& s) { message(Level::error, s); }
inline void warn(const std::string& s) { message(Level::warn, s); }
inline void info(const std::string& s) { message(Level::info, s); }
inline void debug(const std::string& s) { message(Level::debug, s); }

}  // namespace log

inline constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvBasis) {
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t fnv1a64(std::uint64_t v, std::uint64_t h = kFnvBasis) {
    for (int i = 0; i < 8; ++i) {
        h ^= v & 0xff;
        h *= 0x100000001b3ULL;
        v >>= 8;
    }
    return h;
}

// Runs chunk_fn(begin, end) over [0, n) split across `workers` threads.
// Callers are responsible for writing results by index so that the outcome
// does not depend on the worker count.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t)>& chunk_fn);

}  // namespace strata
