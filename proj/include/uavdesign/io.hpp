#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

namespace uav {

// SHA-256 digest (OpenSSL) used for catalog identity, config hashes and the
// checkpoint trailer.
std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes);
std::array<std::uint8_t, 32> sha256(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);

// Writes through a sibling temporary file and renames it over `path` once the
// writer returns, so readers never observe partial output.
void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer);
void write_file_atomic(const std::string& path, std::string_view contents);

std::string read_file(const std::string& path);

// Shortest round-trip decimal rendering in Python repr style ("0.0", "210.88760375976562").
std::string format_double(double value);

}  // namespace uav
