// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace vbg {

/// Lowercases ASCII letters, collapses whitespace runs into one space and trims.
std::string normalize_text(std::string_view s);

/// Levenshtein distance over bytes.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// Splits a UTF-8 string into code-point sized byte slices. Invalid bytes become
/// single-byte slices.
std::vector<std::string_view> utf8_chars(std::string_view s);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Bijective 64-bit finalizer (splitmix64), used to derive independent RNG streams.
std::uint64_t mix64(std::uint64_t x);

std::string to_hex(std::uint64_t v);

}  // namespace vbg
