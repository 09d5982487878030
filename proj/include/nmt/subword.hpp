#pragma once

// Unigram-LM subword vocabulary: a dense id space holding reserved tokens
// (pad, bos, eos, unk, one `__t2xx__` control token per language) followed by
// scored pieces. Encoding picks the maximum-probability segmentation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nmt/digest.hpp"
#include "nmt/error.hpp"
#include "nmt/unicode.hpp"

namespace nmt {

using TokenId = int32_t;
using TokenSequence = std::vector<TokenId>;

// Prefixes every word before segmentation; decode maps it back to a space.
inline constexpr char32_t kWordMarker = U'▁';
inline constexpr std::string_view kWordMarkerUtf8 = "\xE2\x96\x81";
// Surface rendered for unknown tokens on decode.
inline constexpr std::string_view kUnkGlyph = "\xE2\x81\x87";

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

inline std::string control_token(std::string_view lang) {
  return "__t2" + std::string(lang) + "__";
}

struct Piece {
  std::string surface;
  double logprob = 0.0;
};

// Prefix tree over code points; maps piece strings to ids.
class PieceTrie {
 public:
  PieceTrie() : nodes_(1) {}

  void insert(std::u32string_view key, int32_t value) {
    int32_t node = 0;
    for (char32_t c : key) node = child_or_insert(node, c);
    nodes_[static_cast<size_t>(node)].value = value;
  }

  // Calls fn(end_offset, value) for every stored key that is a prefix of
  // text[begin..].
  template <typename Fn>
  void for_each_prefix(std::u32string_view text, size_t begin, Fn &&fn) const {
    int32_t node = 0;
    for (size_t i = begin; i < text.size(); ++i) {
      node = child(node, text[i]);
      if (node < 0) return;
      int32_t value = nodes_[static_cast<size_t>(node)].value;
      if (value >= 0) fn(i + 1, value);
    }
  }

 private:
  struct Node {
    std::vector<std::pair<char32_t, int32_t>> next;  // sorted by code point
    int32_t value = -1;
  };

  int32_t child(int32_t node, char32_t c) const {
    const auto &next = nodes_[static_cast<size_t>(node)].next;
    auto it = std::lower_bound(
        next.begin(), next.end(), c,
        [](const auto &entry, char32_t key) { return entry.first < key; });
    if (it == next.end() || it->first != c) return -1;
    return it->second;
  }

  int32_t child_or_insert(int32_t node, char32_t c) {
    int32_t existing = child(node, c);
    if (existing >= 0) return existing;
    int32_t created = static_cast<int32_t>(nodes_.size());
    nodes_.emplace_back();
    auto &next = nodes_[static_cast<size_t>(node)].next;
    auto it = std::lower_bound(
        next.begin(), next.end(), c,
        [](const auto &entry, char32_t key) { return entry.first < key; });
    next.insert(it, {c, created});
    return created;
  }

  std::vector<Node> nodes_;
};

// Turns normalized text into the code point string the segmenter sees. Each
// space becomes a marker glued to the following word: "ab cd" -> "ab▁cd".
inline std::u32string mark_words(std::string_view normalized) {
  std::u32string out;
  bool pending_space = false;
  for (char32_t c : unicode::to_u32(normalized)) {
    if (c == U' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(kWordMarker);
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

class SubwordModel {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kNumSpecials = 4;
  static constexpr int kFormatVersion = 1;

  SubwordModel() = default;

  // `pieces` are laid out in id order after the reserved block. `weight` is
  // the training token mass used when merging vocabularies.
  SubwordModel(std::vector<std::string> languages, std::vector<Piece> pieces,
               double weight = 1.0)
      : languages_(std::move(languages)),
        pieces_(std::move(pieces)),
        weight_(weight) {
    build_index();
  }

  size_t size() const { return reserved_count() + pieces_.size(); }
  size_t reserved_count() const {
    return static_cast<size_t>(kNumSpecials) + languages_.size();
  }
  size_t piece_count() const { return pieces_.size(); }
  double weight() const { return weight_; }
  const std::vector<std::string> &languages() const { return languages_; }
  const std::vector<Piece> &pieces() const { return pieces_; }

  bool is_reserved(TokenId id) const {
    return id >= 0 && static_cast<size_t>(id) < reserved_count();
  }
  bool is_control(TokenId id) const {
    return id >= kNumSpecials && is_reserved(id);
  }

  bool has_language(std::string_view lang) const {
    return std::find(languages_.begin(), languages_.end(), lang) !=
           languages_.end();
  }

  TokenId control_id(std::string_view lang) const {
    auto it = std::find(languages_.begin(), languages_.end(), lang);
    if (it == languages_.end()) {
      throw ConfigError("language '" + std::string(lang) +
                        "' has no control token in the vocabulary");
    }
    return kNumSpecials + static_cast<TokenId>(it - languages_.begin());
  }

  // Language selected by a control token id.
  const std::string &control_language(TokenId id) const {
    if (!is_control(id)) throw InputError("id is not a control token");
    return languages_[static_cast<size_t>(id - kNumSpecials)];
  }

  std::string surface(TokenId id) const {
    check_id(id);
    switch (id) {
      case kPad: return std::string(kPadToken);
      case kBos: return std::string(kBosToken);
      case kEos: return std::string(kEosToken);
      case kUnk: return std::string(kUnkToken);
      default: break;
    }
    if (is_control(id)) return control_token(control_language(id));
    return pieces_[piece_index(id)].surface;
  }

  // Log-probability of a non-reserved piece.
  double logprob(TokenId id) const {
    check_id(id);
    if (is_reserved(id)) throw InputError("reserved tokens carry no logprob");
    return pieces_[piece_index(id)].logprob;
  }

  std::optional<TokenId> id_of(std::string_view piece) const {
    auto it = index_.find(std::string(piece));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Maximum-probability segmentation of an already marked code point string.
  // Ties prefer fewer pieces, then the lexicographically smallest id sequence.
  // Code points with no piece become one unk token each.
  TokenSequence segment(std::u32string_view text) const {
    struct Cell {
      double score = -std::numeric_limits<double>::infinity();
      int32_t count = 0;
      int32_t prev = -1;
      TokenId id = -1;
    };
    const size_t n = text.size();
    std::vector<Cell> best(n + 1);
    best[0].score = 0.0;

    auto path = [&](size_t end, TokenId last) {
      TokenSequence ids;
      if (last >= 0) ids.push_back(last);
      for (int64_t pos = static_cast<int64_t>(end); pos > 0;
           pos = best[static_cast<size_t>(pos)].prev) {
        ids.push_back(best[static_cast<size_t>(pos)].id);
      }
      std::reverse(ids.begin(), ids.end());
      return ids;
    };

    auto relax = [&](size_t from, size_t to, TokenId id, double piece_score) {
      const Cell &origin = best[from];
      double score = origin.score + piece_score;
      int32_t count = origin.count + 1;
      Cell &target = best[to];
      bool better = false;
      if (target.id < 0 || score > target.score) {
        better = true;
      } else if (score == target.score) {
        if (count < target.count) {
          better = true;
        } else if (count == target.count) {
          TokenSequence candidate = path(from, id);
          TokenSequence incumbent = path(to, -1);
          better = candidate < incumbent;
        }
      }
      if (better) target = Cell{score, count, static_cast<int32_t>(from), id};
    };

    for (size_t i = 0; i < n; ++i) {
      if (best[i].id < 0 && i > 0) continue;
      bool single = false;
      trie_.for_each_prefix(text, i, [&](size_t end, int32_t piece) {
        if (end == i + 1) single = true;
        TokenId id = static_cast<TokenId>(reserved_count()) + piece;
        relax(i, end, id, pieces_[static_cast<size_t>(piece)].logprob);
      });
      if (!single) relax(i, i + 1, kUnk, unk_score_);
    }
    return path(n, -1);
  }

  // Normalizes, marks word starts and segments.
  TokenSequence encode(std::string_view text) const {
    std::string normalized = unicode::normalize(text);
    if (normalized.empty()) return {};
    return segment(mark_words(normalized));
  }

  // Concatenates piece surfaces and maps word markers back to spaces.
  // pad/bos/eos and control tokens carry no text and are skipped.
  std::string decode(const TokenSequence &ids) const {
    std::string joined;
    for (TokenId id : ids) {
      check_id(id);
      if (id == kUnk) {
        joined += kUnkGlyph;
      } else if (!is_reserved(id)) {
        joined += pieces_[piece_index(id)].surface;
      }
    }
    std::string out;
    out.reserve(joined.size());
    size_t pos = 0;
    while (pos < joined.size()) {
      if (joined.compare(pos, kWordMarkerUtf8.size(), kWordMarkerUtf8) == 0) {
        out.push_back(' ');
        pos += kWordMarkerUtf8.size();
      } else {
        out.push_back(joined[pos++]);
      }
    }
    size_t start = out.find_first_not_of(' ');
    if (start == std::string::npos) return {};
    return out.substr(start);
  }

  std::vector<std::string> pieces_of(const TokenSequence &ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId id : ids) out.push_back(surface(id));
    return out;
  }

  // Versioned text form: header records, then one `piece<TAB>logprob` line
  // per piece in id order.
  std::string serialize() const {
    std::ostringstream out;
    out.precision(17);
    out << "#nmt-subword\t" << kFormatVersion << '\n';
    out << "#weight\t" << weight_ << '\n';
    out << "#specials\t" << kPadToken << '\t' << kBosToken << '\t' << kEosToken
        << '\t' << kUnkToken << '\n';
    out << "#controls";
    for (const auto &lang : languages_) out << '\t' << control_token(lang);
    out << '\n';
    out << "#pieces\t" << pieces_.size() << '\n';
    for (const auto &piece : pieces_) {
      out << piece.surface << '\t' << piece.logprob << '\n';
    }
    return out.str();
  }

  static SubwordModel deserialize(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    auto fields_of = [](const std::string &row) {
      std::vector<std::string> fields;
      std::string field;
      std::istringstream row_in(row);
      while (std::getline(row_in, field, '\t')) fields.push_back(field);
      return fields;
    };
    auto expect_header = [&](std::string_view key) {
      if (!std::getline(in, line)) {
        throw InputError("subword model: missing header " + std::string(key));
      }
      auto fields = fields_of(line);
      if (fields.empty() || fields[0] != key) {
        throw InputError("subword model: expected header " + std::string(key));
      }
      return fields;
    };

    auto version = expect_header("#nmt-subword");
    if (version.size() != 2 || version[1] != std::to_string(kFormatVersion)) {
      throw InputError("subword model: unsupported format version");
    }
    auto weight_fields = expect_header("#weight");
    if (weight_fields.size() != 2) throw InputError("subword model: bad weight");
    double weight = std::stod(weight_fields[1]);
    auto specials = expect_header("#specials");
    if (specials.size() != 5 || specials[1] != kPadToken ||
        specials[2] != kBosToken || specials[3] != kEosToken ||
        specials[4] != kUnkToken) {
      throw ConfigError("subword model: unexpected special tokens");
    }
    auto controls = expect_header("#controls");
    std::vector<std::string> languages;
    for (size_t i = 1; i < controls.size(); ++i) {
      const std::string &token = controls[i];
      if (token.size() < 7 || token.rfind("__t2", 0) != 0 ||
          token.substr(token.size() - 2) != "__") {
        throw ConfigError("subword model: malformed control token " + token);
      }
      languages.push_back(token.substr(4, token.size() - 6));
    }
    auto count_fields = expect_header("#pieces");
    if (count_fields.size() != 2) throw InputError("subword model: bad count");
    size_t count = std::stoul(count_fields[1]);
    std::vector<Piece> pieces;
    pieces.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) {
        throw InputError("subword model: truncated piece list");
      }
      size_t tab = line.rfind('\t');
      if (tab == std::string::npos || tab == 0) {
        throw InputError("subword model: malformed piece line " +
                         std::to_string(i + 1));
      }
      pieces.push_back({line.substr(0, tab), std::stod(line.substr(tab + 1))});
    }
    return SubwordModel(std::move(languages), std::move(pieces), weight);
  }

  void save(const std::string &path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << serialize();
  }

  static SubwordModel load(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read subword model " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize(buffer.str());
  }

  // Digest of the serialized form; checkpoints pin the vocabulary with it.
  std::string hash() const { return sha256_hex(serialize()); }

 private:
  void check_id(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= size()) {
      throw InputError("token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(size()) + ")");
    }
  }

  size_t piece_index(TokenId id) const {
    return static_cast<size_t>(id) - reserved_count();
  }

  void build_index() {
    index_.clear();
    trie_ = PieceTrie();
    std::map<std::string, int> seen_lang;
    for (const auto &lang : languages_) {
      if (lang.empty() || ++seen_lang[lang] > 1) {
        throw ConfigError("duplicate or empty language code '" + lang + "'");
      }
    }
    for (TokenId id = 0; id < static_cast<TokenId>(reserved_count()); ++id) {
      index_.emplace(surface(id), id);
    }
    double mass = 0.0;
    double lowest = 0.0;
    for (size_t i = 0; i < pieces_.size(); ++i) {
      const Piece &piece = pieces_[i];
      if (piece.surface.empty()) throw ConfigError("empty piece surface");
      if (!(piece.logprob <= 0.0) || !std::isfinite(piece.logprob)) {
        throw ConfigError("piece '" + piece.surface +
                          "' has invalid logprob");
      }
      TokenId id = static_cast<TokenId>(reserved_count() + i);
      if (!index_.emplace(piece.surface, id).second) {
        throw ConfigError("duplicate piece '" + piece.surface + "'");
      }
      trie_.insert(unicode::to_u32(piece.surface), static_cast<int32_t>(i));
      mass += std::exp(piece.logprob);
      lowest = std::min(lowest, piece.logprob);
    }
    if (!pieces_.empty() && std::abs(mass - 1.0) > 1e-6) {
      throw ConfigError("piece probabilities sum to " + std::to_string(mass));
    }
    unk_score_ = lowest - 10.0;
  }

  std::vector<std::string> languages_;
  std::vector<Piece> pieces_;
  double weight_ = 1.0;
  std::unordered_map<std::string, TokenId> index_;
  PieceTrie trie_;
  double unk_score_ = -10.0;
};

// Unions piece inventories. A piece present in several models gets the
// weight-averaged probability over the models that contain it; the result is
// renormalized and ids are reassigned by descending logprob, then surface.
inline SubwordModel merge_vocabularies(const std::vector<SubwordModel> &models) {
  if (models.empty()) throw InputError("merge needs at least one model");
  const auto &languages = models.front().languages();
  for (const auto &model : models) {
    if (model.languages() != languages) {
      throw ConfigError("cannot merge vocabularies with different control tokens");
    }
    if (!(model.weight() > 0.0)) {
      throw ConfigError("cannot merge a vocabulary with non-positive weight");
    }
  }
  struct Accumulator {
    double weighted_prob = 0.0;
    double weight = 0.0;
  };
  std::map<std::string, Accumulator> merged;
  double total_weight = 0.0;
  for (const auto &model : models) {
    total_weight += model.weight();
    for (const auto &piece : model.pieces()) {
      auto &acc = merged[piece.surface];
      acc.weighted_prob += model.weight() * std::exp(piece.logprob);
      acc.weight += model.weight();
    }
  }
  double mass = 0.0;
  for (const auto &[surface, acc] : merged) mass += acc.weighted_prob / acc.weight;

  std::vector<Piece> pieces;
  pieces.reserve(merged.size());
  for (const auto &[surface, acc] : merged) {
    double prob = acc.weighted_prob / acc.weight / mass;
    pieces.push_back({surface, std::min(0.0, std::log(prob))});
  }
  std::stable_sort(pieces.begin(), pieces.end(),
                   [](const Piece &a, const Piece &b) {
                     if (a.logprob != b.logprob) return a.logprob > b.logprob;
                     return a.surface < b.surface;
                   });
  return SubwordModel(languages, std::move(pieces), total_weight);
}

}  // namespace nmt
