#pragma once
#include <string>
#include <string_view>

namespace cotcap {

// SHA-256 hex digest of a byte string.
std::string sha256_hex(std::string_view data);

// First n hex chars of the digest, for log-friendly short ids.
std::string short_digest(std::string_view data, std::size_t n = 12);

}  // namespace cotcap
