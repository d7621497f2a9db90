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

// Per-impression ranking metrics and ROUGE.

#ifndef EMBSUM_METRICS_HPP_
#define EMBSUM_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "embsum/text.hpp"
#include "json.hpp"

namespace embsum {

struct ImpressionResult {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
  std::size_t negatives() const { return labels.size() - positives(); }
  void validate() const {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  }
};

/// Mann-Whitney AUC: P(s+ > s-) + ½ P(s+ == s-), via average ranks.
/// Returns nullopt for single-class impressions.
inline std::optional<double> auc(const ImpressionResult& r) {
  r.validate();
  const std::size_t P = r.positives(), N = r.negatives();
  if (P == 0 || N == 0) return std::nullopt;
  const std::size_t n = r.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return r.scores[a] < r.scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && r.scores[order[j + 1]] == r.scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t t = i; t <= j; ++t)
      if (r.labels[order[t]]) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double Pd = static_cast<double>(P), Nd = static_cast<double>(N);
  return (pos_rank_sum - Pd * (Pd + 1.0) / 2.0) / (Pd * Nd);
}

/// Positions sorted by descending score; ties keep input order.
inline std::vector<std::size_t> ranking(const ImpressionResult& r) {
  std::vector<std::size_t> order(r.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  return order;
}

/// Mean over positives of 1/rank.
inline std::optional<double> mrr(const ImpressionResult& r) {
  r.validate();
  if (r.positives() == 0) return std::nullopt;
  const auto order = ranking(r);
  double s = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (r.labels[order[i]]) s += 1.0 / static_cast<double>(i + 1);
  return s / static_cast<double>(r.positives());
}

inline std::optional<double> ndcg_at_k(const ImpressionResult& r, std::size_t k) {
  r.validate();
  if (r.positives() == 0) return std::nullopt;
  const auto order = ranking(r);
  double dcg = 0.0, ideal = 0.0;
  const std::size_t lim = std::min(k, order.size());
  for (std::size_t i = 0; i < lim; ++i) {
    const double disc = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    if (r.labels[order[i]]) dcg += disc;
    if (i < r.positives()) ideal += disc;
  }
  return dcg / ideal;
}

struct MetricsReport {
  double auc = 0.0, mrr = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
  std::size_t n_impressions = 0;
  std::size_t n_skipped = 0;
};

inline void to_json(nlohmann::json& j, const MetricsReport& m) {
  j = {{"auc", m.auc},       {"mrr", m.mrr},
       {"ndcg5", m.ndcg5},   {"ndcg10", m.ndcg10},
       {"n_impressions", m.n_impressions}, {"n_skipped", m.n_skipped}};
}

/// Unweighted means over impressions that have both classes; the rest are
/// counted as skipped.
inline MetricsReport aggregate(const std::vector<ImpressionResult>& results) {
  MetricsReport m;
  for (const auto& r : results) {
    auto a = auc(r);
    if (!a) {
      ++m.n_skipped;
      continue;
    }
    m.auc += *a;
    m.mrr += *mrr(r);
    m.ndcg5 += *ndcg_at_k(r, 5);
    m.ndcg10 += *ndcg_at_k(r, 10);
    ++m.n_impressions;
  }
  if (m.n_impressions == 0) throw std::invalid_argument("aggregate: no scorable impressions");
  const double n = static_cast<double>(m.n_impressions);
  m.auc /= n;
  m.mrr /= n;
  m.ndcg5 /= n;
  m.ndcg10 /= n;
  return m;
}

// ---------------------------------------------------------------------------
// ROUGE (no stemming, no stopword removal)

struct RougeScores {
  double rouge1_f = 0.0, rouge2_f = 0.0, rougeL_f = 0.0;
  bool empty_reference = false;
};

inline void to_json(nlohmann::json& j, const RougeScores& r) {
  j = {{"rouge1_f", r.rouge1_f}, {"rouge2_f", r.rouge2_f}, {"rougeL_f", r.rougeL_f}};
}

inline double f1(double overlap, double cand_total, double ref_total) {
  if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
  const double p = overlap / cand_total, r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

inline double rouge_n_f(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                        std::size_t n) {
  auto grams = [n](const std::vector<std::string>& t) {
    std::map<std::vector<std::string>, std::size_t> g;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++g[{t.begin() + static_cast<std::ptrdiff_t>(i),
                                                         t.begin() + static_cast<std::ptrdiff_t>(i + n)}];
    return g;
  };
  const auto gc = grams(cand), gr = grams(ref);
  std::size_t overlap = 0, tc = 0, tr = 0;
  for (const auto& [g, c] : gc) {
    tc += c;
    if (auto it = gr.find(g); it != gr.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [_, c] : gr) tr += c;
  return f1(static_cast<double>(overlap), static_cast<double>(tc), static_cast<double>(tr));
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougeScores rouge(const std::string& candidate, const std::string& reference) {
  const auto c = split_words(candidate), r = split_words(reference);
  RougeScores s;
  if (r.empty()) {
    s.empty_reference = true;
    return s;
  }
  s.rouge1_f = rouge_n_f(c, r, 1);
  s.rouge2_f = rouge_n_f(c, r, 2);
  s.rougeL_f = f1(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()),
                  static_cast<double>(r.size()));
  return s;
}

}  // namespace embsum

#endif  // EMBSUM_METRICS_HPP_
