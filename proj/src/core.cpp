#include "geoproxy/log.hpp"
#include "geoproxy/parallel.hpp"
#include "geoproxy/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <iostream>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

namespace geoproxy {

double normal(Rng& rng, double mean, double sd) {
    double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

namespace log {

namespace {

Level from_env() {
    const char* v = std::getenv("GEOPROXY_LOG");
    if (!v) return Level::info;
    const std::string s(v);
    if (s == "debug") return Level::debug;
    if (s == "warn") return Level::warn;
    return Level::info;
}

Level& current() {
    static Level level = from_env();
    return level;
}

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

Level threshold() { return current(); }
void set_threshold(Level level) { current() = level; }

void write(Level level, std::string_view stage, std::string_view message) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    const char* name = level == Level::debug ? "DEBUG" : level == Level::info ? "INFO" : "WARN";
    std::lock_guard lock(sink_mutex());
    std::cerr << stamp << ' ' << name << " stage=" << stage << ' ' << message << '\n';
}

}  // namespace log
}  // namespace geoproxy
