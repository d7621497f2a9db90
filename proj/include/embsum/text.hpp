// Copyright 2026 The EmbSum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tokenization, vocabulary, and content templating.

#ifndef EMBSUM_TEXT_HPP_
#define EMBSUM_TEXT_HPP_

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "embsum/transformer.hpp"
#include "json.hpp"

namespace embsum {

/// Lowercases and splits on whitespace; every ASCII punctuation character is
/// its own token. Non-ASCII bytes are word characters.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

class Vocab {
 public:
  Vocab() { tokens_ = {"[PAD]", "[SOS]", "[EOS]", "[UNK]"}; reindex(); }

  /// Most frequent tokens first, ties broken lexicographically; max_size
  /// counts the four reserved ids.
  static Vocab build(const std::vector<std::string>& corpus, std::size_t max_size) {
    if (max_size <= kNumSpecial) throw std::invalid_argument("vocab max_size must exceed 4");
    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus)
      for (auto& w : split_words(text)) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [w, _] : ranked) {
      if (v.size() >= max_size) break;
      v.tokens_.push_back(w);
    }
    v.reindex();
    return v;
  }

  static Vocab from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kNumSpecial) throw std::invalid_argument("vocab is missing reserved tokens");
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.reindex();
    if (v.index_.size() != v.tokens_.size()) throw std::invalid_argument("vocab has duplicate tokens");
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  std::vector<std::size_t> tokenize(std::string_view text) const {
    std::vector<std::size_t> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
  }

  /// Joins tokens with single spaces; reserved ids are skipped.
  std::string detokenize(std::span<const std::size_t> ids) const {
    std::string out;
    for (std::size_t id : ids) {
      if (id < kNumSpecial) continue;
      if (!out.empty()) out.push_back(' ');
      out += tokens_.at(id);
    }
    return out;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Templates

/// "{name}" is a required placeholder, "{name?}" an optional one.
class ContentTemplate {
 public:
  struct Segment {
    bool is_field = false;
    bool optional = false;
    std::string text;  // literal text or field name
  };

  ContentTemplate() = default;
  explicit ContentTemplate(std::string_view pattern) : pattern_(pattern) {
    std::size_t i = 0;
    std::string lit;
    while (i < pattern.size()) {
      if (pattern[i] == '{') {
        const auto close = pattern.find('}', i);
        if (close == std::string_view::npos) {
          throw std::invalid_argument("template: unterminated placeholder");
        }
        if (!lit.empty()) segments_.push_back({false, false, std::move(lit)});
        lit.clear();
        std::string name(pattern.substr(i + 1, close - i - 1));
        bool opt = !name.empty() && name.back() == '?';
        if (opt) name.pop_back();
        if (name.empty()) throw std::invalid_argument("template: empty placeholder");
        segments_.push_back({true, opt, std::move(name)});
        i = close + 1;
      } else {
        lit.push_back(pattern[i++]);
      }
    }
    if (!lit.empty()) segments_.push_back({false, false, std::move(lit)});
  }

  static ContentTemplate mind() {
    return ContentTemplate("News Title: {title}; News Abstract: {abstract?}; News Category: {category?}");
  }
  static ContentTemplate goodreads() {
    return ContentTemplate("Book Title: {title}; Book Description: {desc?}");
  }
  static ContentTemplate by_name(const std::string& name) {
    if (name == "mind") return mind();
    if (name == "goodreads") return goodreads();
    throw std::invalid_argument("unknown template '" + name + "'");
  }

  const std::string& pattern() const { return pattern_; }
  const std::vector<Segment>& segments() const { return segments_; }

 private:
  std::string pattern_;
  std::vector<Segment> segments_;
};

using FieldMap = std::map<std::string, std::string>;

inline const std::string* lookup_field(const FieldMap& fields,
                                       const ContentTemplate::Segment& seg) {
  auto it = fields.find(seg.text);
  if (it != fields.end()) return &it->second;
  if (!seg.optional) {
    throw std::invalid_argument("template field '" + seg.text + "' missing and not optional");
  }
  return nullptr;
}

inline std::string format_content(const FieldMap& fields, const ContentTemplate& tpl) {
  std::string out;
  for (const auto& seg : tpl.segments()) {
    if (!seg.is_field) {
      out += seg.text;
    } else if (const std::string* v = lookup_field(fields, seg)) {
      out += *v;
    }
  }
  return out;
}

/// Per-field token caps applied before templating.
using FieldCaps = std::map<std::string, std::size_t>;

inline FieldCaps mind_caps() { return {{"title", 32}, {"abstract", 72}, {"category", 7}}; }
inline FieldCaps goodreads_caps() { return {{"title", 24}, {"desc", 85}}; }

/// Keeps the first cap ids.
inline std::vector<std::size_t> truncate_field(std::vector<std::size_t> ids, std::size_t cap) {
  if (ids.size() > cap) ids.resize(cap);
  return ids;
}

struct TruncatedFields {
  std::vector<std::size_t> title, abstract;
};

inline TruncatedFields truncate_item(std::vector<std::size_t> title_ids,
                                     std::vector<std::size_t> abstract_ids,
                                     std::size_t title_cap, std::size_t abstract_cap) {
  return {truncate_field(std::move(title_ids), title_cap),
          truncate_field(std::move(abstract_ids), abstract_cap)};
}

/// Token ids of an item: [SOS] + template literals interleaved with each
/// field's capped tokens + [EOS].
inline std::vector<std::size_t> encode_item(const FieldMap& fields, const ContentTemplate& tpl,
                                            const FieldCaps& caps, const Vocab& vocab) {
  std::vector<std::size_t> ids{kSos};
  for (const auto& seg : tpl.segments()) {
    std::vector<std::size_t> part;
    if (!seg.is_field) {
      part = vocab.tokenize(seg.text);
    } else if (const std::string* v = lookup_field(fields, seg)) {
      part = vocab.tokenize(*v);
      if (auto it = caps.find(seg.text); it != caps.end()) {
        part = truncate_field(std::move(part), it->second);
      }
    }
    ids.insert(ids.end(), part.begin(), part.end());
  }
  ids.push_back(kEos);
  return ids;
}

/// Upper bound on encode_item length given the caps (uncapped fields are
/// not bounded and make this return nullopt).
inline std::optional<std::size_t> item_token_budget(const ContentTemplate& tpl,
                                                    const FieldCaps& caps,
                                                    const Vocab& vocab) {
  std::size_t n = 2;
  for (const auto& seg : tpl.segments()) {
    if (!seg.is_field) {
      n += vocab.tokenize(seg.text).size();
    } else {
      auto it = caps.find(seg.text);
      if (it == caps.end()) return std::nullopt;
      n += it->second;
    }
  }
  return n;
}

}  // namespace embsum

#endif  // EMBSUM_TEXT_HPP_
