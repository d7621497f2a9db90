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

#ifndef EMBSUM_CORPUS_HPP_
#define EMBSUM_CORPUS_HPP_

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "embsum/data.hpp"
#include "embsum/text.hpp"
#include "json.hpp"

namespace embsum {

/// Raw corpus as read from (or written to) a data directory.
struct Corpus {
  std::vector<ContentItem> items;
  std::vector<EngagementRecord> records;
  std::vector<Impression> impressions;
};

struct DataConfig {
  std::string template_name = "mind";  // mind | goodreads | custom
  std::string custom_template;         // pattern used when template_name is custom
  std::size_t k_history = 60;
  std::size_t p_items = 15;
  // Per-session token cap; 0 means the encoder's max_positions.
  std::size_t session_token_cap = 0;
  std::size_t vocab_size = 5000;

  // Custom templates carry no field caps; items are still cut at max_positions.
  FieldCaps caps() const {
    if (template_name == "custom") return {};
    return template_name == "goodreads" ? goodreads_caps() : mind_caps();
  }
  ContentTemplate content_template() const {
    if (template_name == "custom") {
      if (custom_template.empty()) throw std::invalid_argument("custom template needs a pattern");
      return ContentTemplate(custom_template);
    }
    return ContentTemplate::by_name(template_name);
  }
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"template", c.template_name},
       {"custom_template", c.custom_template},
       {"k_history", c.k_history},
       {"p_items", c.p_items},
       {"session_token_cap", c.session_token_cap},
       {"vocab_size", c.vocab_size}};
}
inline void from_json(const nlohmann::json& j, DataConfig& c) {
  DataConfig def;
  c.template_name = j.value("template", def.template_name);
  c.custom_template = j.value("custom_template", def.custom_template);
  c.k_history = j.value("k_history", def.k_history);
  c.p_items = j.value("p_items", def.p_items);
  c.session_token_cap = j.value("session_token_cap", def.session_token_cap);
  c.vocab_size = j.value("vocab_size", def.vocab_size);
}

/// A user's model inputs: sessions of items of token ids.
struct UserData {
  std::string id;
  std::vector<std::vector<std::vector<std::size_t>>> sessions;
  std::optional<std::string> summary;
  std::vector<std::size_t> summary_ids;  // empty when no summary
};

/// Token-level view of a corpus ready for the model.
struct Dataset {
  Vocab vocab;
  std::unordered_map<std::string, std::vector<std::size_t>> item_tokens;
  std::map<std::string, UserData> users;
  std::vector<Impression> train, dev, test;

  const std::vector<Impression>& split(Split s) const {
    switch (s) {
      case Split::kTrain: return train;
      case Split::kDev: return dev;
      default: return test;
    }
  }
};

/// Fills formatted text and token ids of every item.
inline void format_items(std::vector<ContentItem>& items, const DataConfig& cfg, const Vocab& vocab) {
  const auto tpl = cfg.content_template();
  const auto caps = cfg.caps();
  for (auto& it : items) {
    FieldMap f = it.fields;
    if (!f.count("desc") && f.count("abstract")) f["desc"] = f["abstract"];
    it.formatted = format_content(f, tpl);
    it.token_ids = encode_item(f, tpl, caps, vocab);
  }
}

/// Text used to build the vocabulary: every formatted item and summary.
inline std::vector<std::string> vocab_corpus(const Corpus& c, const DataConfig& cfg) {
  std::vector<std::string> texts;
  const auto tpl = cfg.content_template();
  for (const auto& it : c.items) {
    FieldMap f = it.fields;
    if (!f.count("desc") && f.count("abstract")) f["desc"] = f["abstract"];
    texts.push_back(format_content(f, tpl));
  }
  for (const auto& r : c.records)
    if (r.summary) texts.push_back(*r.summary);
  return texts;
}

/// Sessionizes every user (p_items == 1 encodes each item alone) and
/// tokenizes items and summaries.
inline Dataset prepare_dataset(Corpus corpus, const DataConfig& cfg, const Vocab& vocab,
                               std::size_t max_positions, bool one_item_per_session = false) {
  Dataset ds;
  ds.vocab = vocab;
  format_items(corpus.items, cfg, vocab);
  std::unordered_map<std::string, std::size_t> lengths;
  for (auto& it : corpus.items) {
    if (it.token_ids.size() > max_positions) it.token_ids.resize(max_positions);
    lengths[it.id] = it.token_ids.size();
    ds.item_tokens[it.id] = it.token_ids;
  }
  const std::size_t cap = cfg.session_token_cap ? std::min(cfg.session_token_cap, max_positions)
                                                : max_positions;
  const std::size_t p = one_item_per_session ? 1 : cfg.p_items;
  for (const auto& rec : corpus.records) {
    UserData u;
    u.id = rec.user_id;
    std::vector<std::string> hist;
    for (const auto& id : latest_k(rec.history, cfg.k_history))
      if (ds.item_tokens.count(id)) hist.push_back(id);
    for (const auto& session : partition_sessions(hist, p)) {
      auto kept = cap_session_tokens(session, lengths, cap);
      if (kept.empty()) continue;
      std::vector<std::vector<std::size_t>> s;
      for (const auto& id : kept) s.push_back(ds.item_tokens.at(id));
      u.sessions.push_back(std::move(s));
    }
    if (rec.summary) {
      u.summary = rec.summary;
      u.summary_ids = vocab.tokenize(*rec.summary);
      // Decoder input is [SOS] + summary.
      if (u.summary_ids.size() + 1 > max_positions) u.summary_ids.resize(max_positions - 1);
    }
    ds.users[u.id] = std::move(u);
  }
  for (auto& imp : corpus.impressions) {
    if (!ds.users.count(imp.user_id)) continue;
    switch (imp.split) {
      case Split::kTrain: ds.train.push_back(imp); break;
      case Split::kDev: ds.dev.push_back(imp); break;
      case Split::kTest: ds.test.push_back(imp); break;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Directory layout: news.tsv, behaviors_{train,dev,test}.tsv, summaries.tsv

inline void save_corpus_dir(const std::filesystem::path& dir, const Corpus& c) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "news.tsv");
    write_mind_news(os, c.items);
  }
  std::map<std::string, std::vector<std::string>> hist;
  std::map<std::string, std::string> summaries;
  for (const auto& r : c.records) {
    hist[r.user_id] = r.history;
    if (r.summary) summaries[r.user_id] = *r.summary;
  }
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    std::vector<Impression> part;
    for (const auto& imp : c.impressions)
      if (imp.split == s) part.push_back(imp);
    std::ofstream os(dir / (std::string("behaviors_") + split_name(s) + ".tsv"));
    write_mind_behaviors(os, part, hist);
  }
  std::ofstream os(dir / "summaries.tsv");
  write_summaries(os, summaries);
}

/// Reads a corpus directory. A missing split file or summaries file is
/// treated as empty. Histories come from the first impression of each user.
inline Corpus load_corpus_dir(const std::filesystem::path& dir,
                              std::vector<std::string>* dropped = nullptr) {
  Corpus c;
  c.items = parse_mind_news((dir / "news.tsv").string());
  std::set<std::string> known;
  for (const auto& it : c.items) known.insert(it.id);
  std::map<std::string, std::size_t> rec_index;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    const auto path = dir / (std::string("behaviors_") + split_name(s) + ".tsv");
    if (!std::filesystem::exists(path)) continue;
    auto parsed = parse_mind_behaviors(path.string(), known, s);
    for (auto& r : parsed.records) {
      if (rec_index.count(r.user_id)) continue;
      rec_index[r.user_id] = c.records.size();
      c.records.push_back(std::move(r));
    }
    for (auto& imp : parsed.impressions) c.impressions.push_back(std::move(imp));
    if (dropped) dropped->insert(dropped->end(), parsed.dropped_ids.begin(), parsed.dropped_ids.end());
  }
  if (std::filesystem::exists(dir / "summaries.tsv")) {
    for (auto& [user, text] : read_summaries((dir / "summaries.tsv").string())) {
      auto it = rec_index.find(user);
      if (it != rec_index.end()) c.records[it->second].summary = text;
    }
  }
  return c;
}

}  // namespace embsum

#endif  // EMBSUM_CORPUS_HPP_
