#include "mdt/common.hpp"

#include <charconv>
#include <cmath>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace mdt {

Date parse_date(std::string_view text) {
    auto fail = [&] { throw DataError("date", "malformed date '" + std::string(text) + "', expected YYYY-MM-DD"); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') fail();
    int y = 0;
    unsigned m = 0, d = 0;
    auto parse = [&](std::string_view s, auto& out) {
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc{} || p != s.data() + s.size()) fail();
    };
    parse(text.substr(0, 4), y);
    parse(text.substr(5, 2), m);
    parse(text.substr(8, 2), d);
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) fail();
    return std::chrono::sys_days{ymd};
}

std::string format_date(Date d) {
    std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(base) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

void parallel_for(Index n, int workers, const std::function<void(Index)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (Index k = 0; k < n; ++k) fn(k);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (Index k = next++; k < n; k = next++) {
            try {
                fn(k);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const auto count = std::min<Index>(workers, n);
    for (Index w = 0; w < count; ++w) pool.emplace_back(run);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace mdt
