// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sumer {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a. Stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string to_lower(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string trim(std::string_view s);

/// Lowercase, delete ASCII punctuation, split on whitespace. No article removal.
/// Shared by token F1 and BLEU-1 so the two metrics see identical tokens.
std::vector<std::string> normalize_answer_tokens(std::string_view text);

}  // namespace sumer
