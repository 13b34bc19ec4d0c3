#include "strata/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <thread>
#include <vector>

namespace strata {

std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list copy;
    va_copy(copy, args);
    int n = std::vsnprintf(nullptr, 0, fmt, copy);
    va_end(copy);
    std::string out;
    if (n > 0) {
        out.resize(static_cast<std::size_t>(n));
        std::vsnprintf(out.data(), out.size() + 1, fmt, args);
    }
    va_end(args);
    return out;
}

namespace log {

static Level parse_env_level() {
    const char* env = std::getenv("STRATA_LOG");
    if (!env) return Level::warn;
    if (std::strcmp(env, "error") == 0) return Level::error;
    if (std::strcmp(env, "warn") == 0) return Level::warn;
    if (std::strcmp(env, "info") == 0) return Level::info;
    if (std::strcmp(env, "debug") == 0) return Level::debug;
    std::fprintf(stderr, "[strata] ignoring unknown STRATA_LOG value '%s'\n", env);
    return Level::warn;
}

Level threshold() {
    static Level level = parse_env_level();
    return level;
}

void message(Level level, const std::string& text) {
    if (level > threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::fprintf(stderr, "[strata:%s] %s\n", names[static_cast<int>(level)], text.c_str());
}

}  // namespace log

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t)>& chunk_fn) {
    if (n == 0) return;
    std::size_t w = workers > 0 ? static_cast<std::size_t>(workers) : 1;
    if (w <= 1 || n == 1) {
        chunk_fn(0, n);
        return;
    }
    if (w > n) w = n;
    std::vector<std::thread> threads;
    threads.reserve(w);
    std::size_t chunk = (n + w - 1) / w;
    for (std::size_t t = 0; t < w; ++t) {
        std::size_t begin = t * chunk;
        std::size_t end = begin + chunk < n ? begin + chunk : n;
        if (begin >= end) break;
        threads.emplace_back([&chunk_fn, begin, end] { chunk_fn(begin, end); });
    }
    for (auto& th : threads) th.join();
}

}  // namespace strata
