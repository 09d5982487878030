#pragma once

// UTF-8 helpers backed by ICU: validation, NFC normalization, whitespace
// collapsing, case folding and code point conversion.

#include <string>
#include <string_view>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "nmt/error.hpp"

namespace nmt::unicode {

inline bool valid_utf8(std::string_view text) {
  const auto *bytes = reinterpret_cast<const uint8_t *>(text.data());
  int32_t length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) return false;
  }
  return true;
}

inline std::u32string to_u32(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto *bytes = reinterpret_cast<const uint8_t *>(text.data());
  int32_t length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) throw InputError("invalid UTF-8 sequence");
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

inline void append_utf8(std::string &out, char32_t c) {
  uint8_t buf[4];
  int32_t n = 0;
  UBool error = false;
  U8_APPEND(buf, n, 4, static_cast<UChar32>(c), error);
  if (error) throw InputError("code point cannot be encoded as UTF-8");
  out.append(reinterpret_cast<const char *>(buf), static_cast<size_t>(n));
}

inline std::string to_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t c : text) append_utf8(out, c);
  return out;
}

inline bool is_space(char32_t c) {
  return u_isUWhiteSpace(static_cast<UChar32>(c));
}

inline bool is_punct(char32_t c) {
  return u_ispunct(static_cast<UChar32>(c));
}

inline std::string nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2 *normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw ConfigError("ICU NFC normalizer unavailable");
  icu::UnicodeString source = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString result = normalizer->normalize(source, status);
  if (U_FAILURE(status)) throw InputError("NFC normalization failed");
  std::string out;
  result.toUTF8String(out);
  return out;
}

// Collapses runs of Unicode whitespace to one ASCII space and trims both ends.
inline std::string collapse_whitespace(std::string_view text) {
  std::u32string codepoints = to_u32(text);
  std::u32string out;
  out.reserve(codepoints.size());
  bool pending_space = false;
  for (char32_t c : codepoints) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  return to_utf8(out);
}

// NFC followed by whitespace collapsing. Throws InputError on invalid UTF-8.
inline std::string normalize(std::string_view text) {
  if (!valid_utf8(text)) throw InputError("invalid UTF-8 sequence");
  return collapse_whitespace(nfc(text));
}

inline std::string lowercase(std::string_view text) {
  icu::UnicodeString source = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  source.toLower(icu::Locale::getRoot());
  std::string out;
  source.toUTF8String(out);
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> tokens;
  std::u32string current;
  for (char32_t c : to_u32(text)) {
    if (is_space(c)) {
      if (!current.empty()) tokens.push_back(to_utf8(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(to_utf8(current));
  return tokens;
}

}  // namespace nmt::unicode
