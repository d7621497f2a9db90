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

// Users, items, impressions, sessionization, negative sampling, and the MIND
// TSV readers/writers.

#ifndef EMBSUM_DATA_HPP_
#define EMBSUM_DATA_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "embsum/text.hpp"

namespace embsum {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ContentItem {
  std::string id;
  FieldMap fields;
  std::string formatted;
  std::vector<std::size_t> token_ids;
};

struct EngagementRecord {
  std::string user_id;
  std::vector<std::string> history;  // oldest first, most recent last
  std::vector<std::vector<std::string>> sessions;
  std::optional<std::string> summary;

  bool cold_start() const { return sessions.empty(); }
};

enum class Split { kTrain, kDev, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

struct Impression {
  std::string id;
  std::string user_id;
  std::vector<std::pair<std::string, int>> candidates;  // (item id, label)
  Split split = Split::kTrain;
};

/// One positive plus its sampled negatives.
struct TrainInstance {
  std::string user_id;
  std::string positive;
  std::vector<std::string> negatives;
};

// ---------------------------------------------------------------------------
// Sessions

/// The most recent k entries of history, order preserved.
inline std::vector<std::string> latest_k(const std::vector<std::string>& history, std::size_t k) {
  if (history.size() <= k) return history;
  return {history.end() - static_cast<std::ptrdiff_t>(k), history.end()};
}

/// Chronological chunks of p_items; the last may be shorter. An empty
/// history yields no sessions (cold start).
template <class T>
std::vector<std::vector<T>> partition_sessions(const std::vector<T>& history, std::size_t p_items) {
  if (p_items == 0) throw std::invalid_argument("partition_sessions: p_items must be >= 1");
  std::vector<std::vector<T>> sessions;
  for (std::size_t i = 0; i < history.size(); i += p_items) {
    const std::size_t end = std::min(history.size(), i + p_items);
    sessions.emplace_back(history.begin() + static_cast<std::ptrdiff_t>(i),
                          history.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return sessions;
}

/// Drops whole items from the session tail until the token total fits in
/// max_tokens. May return an empty session.
inline std::vector<std::string> cap_session_tokens(
    const std::vector<std::string>& session,
    const std::unordered_map<std::string, std::size_t>& item_lengths, std::size_t max_tokens) {
  std::vector<std::string> out = session;
  auto total = [&] {
    std::size_t n = 0;
    for (const auto& id : out) n += item_lengths.at(id);
    return n;
  };
  while (!out.empty() && total() > max_tokens) out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Negative sampling

struct SamplingStats {
  std::size_t instances = 0;
  std::size_t skipped_no_negatives = 0;
};

/// One instance per shown positive. Negatives are drawn uniformly without
/// replacement when at least `ratio` exist, otherwise with replacement.
template <class Rng>
std::vector<TrainInstance> sample_negatives(const Impression& imp, std::size_t ratio, Rng& rng,
                                            SamplingStats* stats = nullptr) {
  if (ratio == 0) throw std::invalid_argument("sample_negatives: ratio must be >= 1");
  std::vector<std::string> pos, neg;
  for (const auto& [id, label] : imp.candidates) (label ? pos : neg).push_back(id);
  if (pos.empty()) throw std::invalid_argument("sample_negatives: impression " + imp.id + " has no positive");
  std::vector<TrainInstance> out;
  if (neg.empty()) {
    if (stats) stats->skipped_no_negatives += pos.size();
    return out;
  }
  for (const auto& p : pos) {
    TrainInstance inst{imp.user_id, p, {}};
    if (neg.size() >= ratio) {
      std::vector<std::size_t> idx(neg.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      // Partial Fisher-Yates.
      for (std::size_t i = 0; i < ratio; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
        inst.negatives.push_back(neg[idx[i]]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, neg.size() - 1);
      for (std::size_t i = 0; i < ratio; ++i) inst.negatives.push_back(neg[pick(rng)]);
    }
    out.push_back(std::move(inst));
  }
  if (stats) stats->instances += out.size();
  return out;
}

// ---------------------------------------------------------------------------
// TSV helpers

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

inline std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

// ---------------------------------------------------------------------------
// MIND format

/// news.tsv: id, category, subcategory, title, abstract, url, title
/// entities, abstract entities. Only title, abstract and category are kept.
inline std::vector<ContentItem> parse_mind_news(std::istream& is, const std::string& source = "news.tsv") {
  std::vector<ContentItem> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 8) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 8 columns, got " +
                       std::to_string(cols.size()));
    }
    if (cols[0].empty()) throw ParseError(source + ":" + std::to_string(lineno) + ": empty news id");
    if (!seen.insert(cols[0]).second) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": duplicate news id " + cols[0]);
    }
    ContentItem item;
    item.id = cols[0];
    item.fields = {{"title", cols[3]}, {"abstract", cols[4]}, {"category", cols[1]}};
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<ContentItem> parse_mind_news(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  return parse_mind_news(is, path);
}

struct BehaviorsParse {
  std::vector<EngagementRecord> records;  // first occurrence per user
  std::vector<Impression> impressions;
  std::vector<std::string> dropped_ids;   // unknown news ids, one entry per occurrence
};

/// behaviors.tsv: impression id, user id, time, history ids, candidates
/// "Nxxx-{0|1}". Unknown news ids are dropped and recorded.
inline BehaviorsParse parse_mind_behaviors(std::istream& is, const std::set<std::string>& known,
                                           Split split, const std::string& source = "behaviors.tsv") {
  BehaviorsParse out;
  std::set<std::string> users_seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    auto cols = split_tabs(line);
    if (cols.size() != 5) {
      throw ParseError(where + ": expected 5 columns, got " + std::to_string(cols.size()));
    }
    Impression imp;
    imp.id = cols[0];
    imp.user_id = cols[1];
    imp.split = split;
    if (imp.user_id.empty()) throw ParseError(where + ": empty user id");
    std::vector<std::string> history;
    for (auto& id : split_spaces(cols[3])) {
      if (known.count(id)) {
        history.push_back(std::move(id));
      } else {
        out.dropped_ids.push_back(std::move(id));
      }
    }
    for (const auto& tok : split_spaces(cols[4])) {
      const auto dash = tok.rfind('-');
      if (dash == std::string::npos || dash + 2 != tok.size() ||
          (tok[dash + 1] != '0' && tok[dash + 1] != '1')) {
        throw ParseError(where + ": malformed candidate '" + tok + "'");
      }
      std::string id = tok.substr(0, dash);
      if (!known.count(id)) {
        out.dropped_ids.push_back(std::move(id));
        continue;
      }
      imp.candidates.emplace_back(std::move(id), tok[dash + 1] - '0');
    }
    if (users_seen.insert(imp.user_id).second) {
      EngagementRecord rec;
      rec.user_id = imp.user_id;
      rec.history = std::move(history);
      out.records.push_back(std::move(rec));
    }
    out.impressions.push_back(std::move(imp));
  }
  return out;
}

inline BehaviorsParse parse_mind_behaviors(const std::string& path, const std::set<std::string>& known,
                                           Split split) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  return parse_mind_behaviors(is, known, split, path);
}

inline void write_mind_news(std::ostream& os, const std::vector<ContentItem>& items) {
  auto field = [](const ContentItem& it, const char* k) {
    auto f = it.fields.find(k);
    return f == it.fields.end() ? std::string() : f->second;
  };
  for (const auto& it : items) {
    os << it.id << '\t' << field(it, "category") << '\t' << field(it, "subcategory") << '\t'
       << field(it, "title") << '\t' << field(it, "abstract") << '\t' << "" << '\t' << "[]" << '\t'
       << "[]" << '\n';
  }
}

/// time column is written as a fixed placeholder; it is never read back.
inline void write_mind_behaviors(std::ostream& os, const std::vector<Impression>& imps,
                                 const std::map<std::string, std::vector<std::string>>& histories) {
  for (const auto& imp : imps) {
    os << imp.id << '\t' << imp.user_id << "\t11/11/2019 9:00:00 AM\t";
    const auto& h = histories.at(imp.user_id);
    for (std::size_t i = 0; i < h.size(); ++i) os << (i ? " " : "") << h[i];
    os << '\t';
    for (std::size_t i = 0; i < imp.candidates.size(); ++i) {
      os << (i ? " " : "") << imp.candidates[i].first << '-' << imp.candidates[i].second;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// summaries.tsv: user_id <TAB> text

inline std::map<std::string, std::string> read_summaries(std::istream& is,
                                                         const std::string& source = "summaries.tsv") {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected user_id<TAB>summary");
    }
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

inline std::map<std::string, std::string> read_summaries(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  return read_summaries(is, path);
}

inline void write_summaries(std::ostream& os, const std::map<std::string, std::string>& s) {
  for (const auto& [user, text] : s) os << user << '\t' << text << '\n';
}

}  // namespace embsum

#endif  // EMBSUM_DATA_HPP_
