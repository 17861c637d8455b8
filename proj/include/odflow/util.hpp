#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace odflow {

// Shortest decimal representation that round-trips to the same double.
// Used everywhere a double is written to CSV/JSON output so that repeated
// runs are byte-identical and values can be parsed back exactly.
std::string fmt_double(double x);

// Strict double/integer parsing (whole string must be consumed).
// Returns false on any malformed input.
bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, long long& out);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// FNV-1a 64-bit, hex-encoded. Fingerprint for manifests, not cryptographic.
std::uint64_t fnv1a64(std::string_view data);
std::string fnv1a64_hex(std::string_view data);

} // namespace odflow
