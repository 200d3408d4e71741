#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace soapkd {

// Process exit codes used by the CLI.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfigError = 2,
    kExitDataError = 3,
    kExitContractViolation = 4,
};

// Bad user-supplied values: malformed config files, unknown keys, impossible
// network specs.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad runtime inputs: shape mismatches, NaN pixels, empty datasets,
// out-of-range labels, missing upstream artifacts.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal promises: mutating a frozen model, filtering an
// unrefined pool. These indicate caller bugs, not bad data.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// FNV-1a, used for config fingerprints and artifact identity checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

std::string hex64(std::uint64_t v);

}  // namespace soapkd
