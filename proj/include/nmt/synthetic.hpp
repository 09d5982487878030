#pragma once

// Synthetic multilingual corpora. A base language is generated from a random
// lexicon over a 20-letter alphabet; other languages are deterministic
// transformations of it (identity, string reversal, vowel rotation), so every
// base sentence yields a fully parallel tuple.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace nmt::synthetic {

inline constexpr std::string_view kAlphabet = "abcdefghijklmnopqrst";
inline constexpr std::string_view kVowels = "aeio";

enum class Transform { kIdentity, kReverse, kVowelRotate };

struct Language {
  std::string code;
  Transform transform;
};

// en is the identity language; xr reverses the string; xv rotates vowels
// a->e->i->o->a.
inline const std::vector<Language> &default_languages() {
  static const std::vector<Language> kLanguages = {
      {"en", Transform::kIdentity},
      {"xr", Transform::kReverse},
      {"xv", Transform::kVowelRotate}};
  return kLanguages;
}

inline std::string transform_text(Transform transform, std::string_view base) {
  std::string out(base);
  switch (transform) {
    case Transform::kIdentity:
      break;
    case Transform::kReverse:
      std::reverse(out.begin(), out.end());
      break;
    case Transform::kVowelRotate:
      for (char &c : out) {
        size_t v = kVowels.find(c);
        if (v != std::string_view::npos) c = kVowels[(v + 1) % kVowels.size()];
      }
      break;
  }
  return out;
}

// Distinct words of 2-5 letters, each with at least one vowel and none a
// palindrome, so every transformation changes every word.
inline std::vector<std::string> make_lexicon(size_t size, uint64_t seed,
                                             const std::set<std::string> &exclude = {}) {
  std::mt19937_64 rng(seed);
  std::set<std::string> seen(exclude);
  std::vector<std::string> words;
  while (words.size() < size) {
    size_t length = 2 + rng() % 4;
    std::string word;
    for (size_t i = 0; i < length; ++i) word += kAlphabet[rng() % kAlphabet.size()];
    bool has_vowel = word.find_first_of(kVowels) != std::string::npos;
    std::string reversed(word.rbegin(), word.rend());
    if (!has_vowel || reversed == word || !seen.insert(word).second) continue;
    words.push_back(word);
  }
  return words;
}

inline std::vector<std::string> make_sentences(const std::vector<std::string> &lexicon,
                                               size_t count, size_t min_words,
                                               size_t max_words, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> sentences;
  sentences.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    size_t words = min_words + rng() % (max_words - min_words + 1);
    std::string sentence;
    for (size_t w = 0; w < words; ++w) {
      if (w) sentence += ' ';
      sentence += lexicon[rng() % lexicon.size()];
    }
    sentences.push_back(std::move(sentence));
  }
  return sentences;
}

inline std::vector<std::string> transform_all(Transform transform,
                                              const std::vector<std::string> &base) {
  std::vector<std::string> out;
  out.reserve(base.size());
  for (const auto &line : base) out.push_back(transform_text(transform, line));
  return out;
}

}  // namespace nmt::synthetic
