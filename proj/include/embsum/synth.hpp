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

// Synthetic corpus with known latent interests.
//
// Topics own disjoint word pools. Items belong to one topic and draw title
// and abstract words from its pool; the category field is the topic name.
// Users prefer 1..max_preferred topics. Histories mix preferred-topic items
// with uniform noise, positives come from preferred topics and negatives
// from the others. Reference summaries name the preferred topics.

#ifndef EMBSUM_SYNTH_HPP_
#define EMBSUM_SYNTH_HPP_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "embsum/corpus.hpp"
#include "json.hpp"

namespace embsum {

struct SynthConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 500;
  std::size_t n_topics = 8;
  std::size_t k_history = 12;
  std::size_t vocab_words_per_topic = 20;
  std::size_t max_preferred = 3;
  std::size_t impressions_per_user = 3;
  std::size_t neg_ratio = 4;
  std::size_t title_len = 3;
  std::size_t abstract_len = 6;
  double history_noise = 0.1;
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 7;
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_users", c.n_users},
       {"n_items", c.n_items},
       {"n_topics", c.n_topics},
       {"k_history", c.k_history},
       {"vocab_words_per_topic", c.vocab_words_per_topic},
       {"max_preferred", c.max_preferred},
       {"impressions_per_user", c.impressions_per_user},
       {"neg_ratio", c.neg_ratio},
       {"title_len", c.title_len},
       {"abstract_len", c.abstract_len},
       {"history_noise", c.history_noise},
       {"dev_fraction", c.dev_fraction},
       {"test_fraction", c.test_fraction},
       {"seed", c.seed}};
}

/// Ground truth sidecar (topics.json).
struct SynthTruth {
  std::vector<std::string> topic_names;
  std::map<std::string, std::size_t> item_topic;
  std::map<std::string, std::vector<std::size_t>> user_topics;
};

struct SynthCorpus {
  Corpus corpus;
  SynthTruth truth;
};

inline std::string topic_name(std::size_t t) { return "topic" + std::to_string(t); }

inline std::string topic_word(std::size_t t, std::size_t j) {
  return "t" + std::to_string(t) + "w" + std::to_string(j);
}

/// "the user is interested in a ." / "... a and b ." / "... a , b and c ."
inline std::string interest_summary(const std::vector<std::size_t>& topics) {
  std::string s = "the user is interested in ";
  for (std::size_t i = 0; i < topics.size(); ++i) {
    if (i > 0) s += (i + 1 == topics.size()) ? " and " : " , ";
    s += topic_name(topics[i]);
  }
  return s + " .";
}

inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  if (cfg.n_topics < 2) throw std::invalid_argument("synth: n_topics must be >= 2");
  if (cfg.max_preferred == 0 || cfg.max_preferred >= cfg.n_topics) {
    throw std::invalid_argument("synth: max_preferred must be in [1, n_topics)");
  }
  if (cfg.n_items < cfg.n_topics) throw std::invalid_argument("synth: need at least one item per topic");
  if (cfg.vocab_words_per_topic == 0 || cfg.neg_ratio == 0) {
    throw std::invalid_argument("synth: vocab_words_per_topic and neg_ratio must be positive");
  }
  std::mt19937_64 rng(cfg.seed);
  SynthCorpus out;
  auto& truth = out.truth;
  for (std::size_t t = 0; t < cfg.n_topics; ++t) truth.topic_names.push_back(topic_name(t));

  // Items: balanced topic assignment in shuffled order.
  std::vector<std::size_t> topic_of(cfg.n_items);
  for (std::size_t i = 0; i < cfg.n_items; ++i) topic_of[i] = i % cfg.n_topics;
  std::shuffle(topic_of.begin(), topic_of.end(), rng);
  std::vector<std::vector<std::size_t>> by_topic(cfg.n_topics);
  std::uniform_int_distribution<std::size_t> word(0, cfg.vocab_words_per_topic - 1);
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    const std::size_t t = topic_of[i];
    ContentItem it;
    it.id = "N" + std::to_string(i + 1);
    auto words = [&](std::size_t n) {
      std::string s;
      for (std::size_t j = 0; j < n; ++j) s += (j ? " " : "") + topic_word(t, word(rng));
      return s;
    };
    it.fields["title"] = words(cfg.title_len);
    it.fields["abstract"] = words(cfg.abstract_len);
    it.fields["category"] = topic_name(t);
    truth.item_topic[it.id] = t;
    by_topic[t].push_back(i);
    out.corpus.items.push_back(std::move(it));
  }

  std::vector<std::size_t> user_order(cfg.n_users);
  std::iota(user_order.begin(), user_order.end(), std::size_t{0});
  std::shuffle(user_order.begin(), user_order.end(), rng);
  const auto n_dev = static_cast<std::size_t>(cfg.dev_fraction * static_cast<double>(cfg.n_users) + 0.5);
  const auto n_test = static_cast<std::size_t>(cfg.test_fraction * static_cast<double>(cfg.n_users) + 0.5);
  std::vector<Split> split_of(cfg.n_users, Split::kTrain);
  for (std::size_t r = 0; r < cfg.n_users; ++r) {
    if (r < n_dev) split_of[user_order[r]] = Split::kDev;
    else if (r < n_dev + n_test) split_of[user_order[r]] = Split::kTest;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_item(0, cfg.n_items - 1);
  std::uniform_int_distribution<std::size_t> n_pref_dist(1, cfg.max_preferred);
  std::size_t imp_counter = 0;
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    EngagementRecord rec;
    rec.user_id = "U" + std::to_string(u + 1);
    std::vector<std::size_t> topics(cfg.n_topics);
    std::iota(topics.begin(), topics.end(), std::size_t{0});
    std::shuffle(topics.begin(), topics.end(), rng);
    std::vector<std::size_t> pref(topics.begin(),
                                  topics.begin() + static_cast<std::ptrdiff_t>(n_pref_dist(rng)));
    std::sort(pref.begin(), pref.end());
    std::set<std::size_t> pref_set(pref.begin(), pref.end());
    std::vector<std::size_t> other;
    for (std::size_t t = 0; t < cfg.n_topics; ++t)
      if (!pref_set.count(t)) other.push_back(t);
    truth.user_topics[rec.user_id] = pref;

    auto pick_in = [&](const std::vector<std::size_t>& ts) {
      std::uniform_int_distribution<std::size_t> pt(0, ts.size() - 1);
      const auto& pool = by_topic[ts[pt(rng)]];
      std::uniform_int_distribution<std::size_t> pi(0, pool.size() - 1);
      return pool[pi(rng)];
    };

    // History: every preferred topic appears at least once when k allows.
    std::vector<std::size_t> hist;
    std::set<std::size_t> in_hist;
    auto push_unique = [&](auto draw) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        const std::size_t i = draw();
        if (in_hist.insert(i).second) {
          hist.push_back(i);
          return;
        }
      }
    };
    for (std::size_t t : pref) {
      if (hist.size() >= cfg.k_history) break;
      push_unique([&] { return pick_in({t}); });
    }
    for (std::size_t guard = 0; hist.size() < cfg.k_history && guard < 50 * cfg.k_history; ++guard) {
      if (unit(rng) < cfg.history_noise) {
        push_unique([&] { return any_item(rng); });
      } else {
        push_unique([&] { return pick_in(pref); });
      }
    }
    std::shuffle(hist.begin(), hist.end(), rng);
    for (std::size_t i : hist) rec.history.push_back(out.corpus.items[i].id);
    rec.summary = interest_summary(pref);

    for (std::size_t k = 0; k < cfg.impressions_per_user; ++k) {
      Impression imp;
      imp.id = std::to_string(++imp_counter);
      imp.user_id = rec.user_id;
      imp.split = split_of[u];
      std::size_t pos = pick_in(pref);
      for (int attempt = 0; attempt < 20 && in_hist.count(pos); ++attempt) pos = pick_in(pref);
      imp.candidates.emplace_back(out.corpus.items[pos].id, 1);
      std::set<std::size_t> negs;
      for (std::size_t guard = 0; negs.size() < cfg.neg_ratio && guard < 100 * cfg.neg_ratio; ++guard) {
        negs.insert(pick_in(other));
      }
      for (std::size_t i : negs) imp.candidates.emplace_back(out.corpus.items[i].id, 0);
      std::shuffle(imp.candidates.begin(), imp.candidates.end(), rng);
      out.corpus.impressions.push_back(std::move(imp));
    }
    out.corpus.records.push_back(std::move(rec));
  }
  return out;
}

inline nlohmann::json truth_to_json(const SynthTruth& t, const SynthConfig& cfg) {
  nlohmann::json j;
  j["topics"] = t.topic_names;
  j["item_topic"] = t.item_topic;
  j["user_topics"] = t.user_topics;
  j["config"] = cfg;
  return j;
}

inline SynthTruth truth_from_json(const nlohmann::json& j) {
  SynthTruth t;
  t.topic_names = j.at("topics").get<std::vector<std::string>>();
  t.item_topic = j.at("item_topic").get<std::map<std::string, std::size_t>>();
  t.user_topics = j.at("user_topics").get<std::map<std::string, std::vector<std::size_t>>>();
  return t;
}

/// Writes the corpus directory plus topics.json.
inline void save_synth_dir(const std::filesystem::path& dir, const SynthCorpus& s, const SynthConfig& cfg) {
  save_corpus_dir(dir, s.corpus);
  std::ofstream os(dir / "topics.json");
  os << truth_to_json(s.truth, cfg).dump(2) << '\n';
}

/// Keeps a random fraction of the users of each split (at least one per
/// non-empty split) with their impressions. Items are kept in full.
inline Corpus subsample_users(const Corpus& c, double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return c;
  std::map<std::string, Split> user_split;
  for (const auto& imp : c.impressions) user_split.emplace(imp.user_id, imp.split);
  std::mt19937_64 rng(seed);
  std::set<std::string> keep;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    std::vector<std::string> users;
    for (const auto& r : c.records) {
      auto it = user_split.find(r.user_id);
      if (it != user_split.end() && it->second == s) users.push_back(r.user_id);
    }
    if (users.empty()) continue;
    std::shuffle(users.begin(), users.end(), rng);
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(fraction * static_cast<double>(users.size()) + 0.5));
    keep.insert(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(std::min(n, users.size())));
  }
  Corpus out;
  out.items = c.items;
  for (const auto& r : c.records)
    if (keep.count(r.user_id)) out.records.push_back(r);
  for (const auto& imp : c.impressions)
    if (keep.count(imp.user_id)) out.impressions.push_back(imp);
  return out;
}

}  // namespace embsum

#endif  // EMBSUM_SYNTH_HPP_
