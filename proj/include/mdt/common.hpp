#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mdt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Calendar day. Arithmetic is in whole days since the Unix epoch.
using Date = std::chrono::sys_days;

Date parse_date(std::string_view text);
std::string format_date(Date d);
inline Date make_date(int y, unsigned m, unsigned d) {
    return std::chrono::sys_days{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

// Error hierarchy. The kind decides the CLI exit status:
// configuration 1, data 2, anything else 3.
enum class ErrorKind { Config = 1, Data = 2, Runtime = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& what)
        : std::runtime_error(module + ": " + what), kind_(kind), module_(std::move(module)) {}
    ErrorKind kind() const noexcept { return kind_; }
    const std::string& module() const noexcept { return module_; }

private:
    ErrorKind kind_;
    std::string module_;
};

struct ConfigError : Error {
    ConfigError(std::string module, const std::string& what) : Error(ErrorKind::Config, std::move(module), what) {}
};
struct DataError : Error {
    DataError(std::string module, const std::string& what) : Error(ErrorKind::Data, std::move(module), what) {}
};
struct SchemaError : DataError {
    using DataError::DataError;
};
struct LookupError : DataError {
    using DataError::DataError;
};
struct ShapeError : Error {
    ShapeError(std::string module, const std::string& what) : Error(ErrorKind::Runtime, std::move(module), what) {}
};
struct DomainError : Error {
    DomainError(std::string module, const std::string& what) : Error(ErrorKind::Runtime, std::move(module), what) {}
};
struct FitError : Error {
    FitError(std::string module, const std::string& what) : Error(ErrorKind::Runtime, std::move(module), what) {}
};
struct InfeasibleError : Error {
    InfeasibleError(std::string module, const std::string& what) : Error(ErrorKind::Runtime, std::move(module), what) {}
};

/// Free-form diagnostic flags attached to results ("ridge_fallback", ...).
using Flags = std::vector<std::string>;

inline bool has_flag(const Flags& flags, std::string_view f) {
    for (const auto& x : flags)
        if (x == f) return true;
    return false;
}

/// Mixes a base seed with stream identifiers (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Runs fn(0..n-1) on up to `workers` threads. Each index runs exactly once;
/// the first exception thrown by any task is rethrown after all threads join.
void parallel_for(Index n, int workers, const std::function<void(Index)>& fn);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace mdt
