#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tdmr {

/// File could not be read, written or parsed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal text at 9 significant digits ("%.9g").
std::string format_g9(double x);

/// FNV-1a, used for config fingerprints.
uint64_t fnv1a64(std::string_view text);
std::string hex64(uint64_t value);

/// Minimal RFC 4180 style CSV field handling.
std::string csv_escape(std::string_view field);
std::vector<std::string> csv_split(std::string_view line);

}  // namespace tdmr
