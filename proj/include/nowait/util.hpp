#pragma once

// Small string/file helpers shared across modules.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nowait {

// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path & path);
void write_file(const std::filesystem::path & path, std::string_view contents);

// ASCII-only case folding; bytes >= 0x80 are left untouched so UTF-8 stays valid.
std::string ascii_fold(std::string_view s);

inline bool is_ascii_alpha(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline bool is_ascii_digit(unsigned char c) {
    return c >= '0' && c <= '9';
}

std::string_view trim(std::string_view s);

// Collapse runs of ASCII whitespace to a single space and trim both ends.
std::string collapse_whitespace(std::string_view s);

// Appends the UTF-8 encoding of a code point.
void append_utf8(std::string & out, char32_t cp);

// Decodes one code point starting at s[pos], advancing pos. Invalid sequences
// yield U+FFFD and advance by one byte.
char32_t next_code_point(std::string_view s, size_t & pos);

size_t count_code_points(std::string_view s);

} // namespace nowait
