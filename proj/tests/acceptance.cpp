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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   acceptance [all|grad|oracles|metrics|learning|offline|properties|sweep]...

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "embsum/embstore.hpp"
#include "embsum/pipeline.hpp"
#include "embsum/synth.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace embsum;
using embsum::testing::from_mat;
using embsum::testing::Mat;
using embsum::testing::rand_mat;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int g_failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << ": " << detail << std::endl;
  if (!ok) ++g_failures;
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

std::string sci(double x) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. End-to-end gradient check

void criterion_grad() {
  const auto t0 = Clock::now();
  auto w = embsum::testing::tiny_world(6, 3);
  ModelConfig mc = embsum::testing::tiny_model_config(16, 4, 2, 8);
  EmbSumModel model(mc, w.vocab, 7);
  // Weights away from the near-zero init so every path carries signal.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& [name, t] : model.params().items())
    for (double& x : t.mutable_data()) x += nd(rng);

  std::vector<TrainInstance> batch;
  std::set<std::string> users;
  for (const auto& imp : w.ds.train) {
    if (users.size() >= 2 && !users.count(imp.user_id)) continue;
    users.insert(imp.user_id);
    for (auto& inst : sample_negatives(imp, 2, rng)) batch.push_back(inst);
  }
  auto loss_fn = [&] { return batch_loss(model, w.ds, batch, 0.05).loss; };
  // Some gradients are exactly zero (the key bias shifts every logit of a row
  // equally); their central differences are a few ulps of the loss over 2e-5.
  GradCheckReport rep = grad_check(loss_fn, model.params(), {.eps = 1e-5, .tol = 1e-4, .abs_floor = 1e-5});
  const double secs = seconds_since(t0);
  std::size_t coords = 0;
  std::string worst;
  double worst_err = -1.0;
  for (const auto& e : rep.entries) {
    coords += e.numel;
    if (e.max_rel_err > worst_err) worst_err = e.max_rel_err, worst = e.name;
  }
  const bool ok = rep.passed() && secs < 120.0;
  report(1, "finite-difference gradients of the total loss", ok,
         std::to_string(rep.entries.size()) + " tensors, " + std::to_string(coords) +
             " coordinates, max rel err " + sci(rep.max_rel_err()) + " at " + worst + " (tol 1e-4, floor 1e-5), " +
             fmt(secs, 3) + " s (limit 120 s)");
}

// ---------------------------------------------------------------------------
// 2. Equation oracles

void criterion_oracles() {
  std::mt19937_64 rng(2026);
  double poly_err = 0.0, score_err = 0.0, nce_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t r = 1 + rng() % 9, d = 1 + rng() % 8, m = 1 + rng() % 6, c = 1 + rng() % 6;
    Mat z = rand_mat(r, d, rng), codes = rand_mat(m, c, rng, 1.5), proj = rand_mat(d, c, rng);
    PolyAttention layer{from_mat(codes), from_mat(proj)};
    Tensor out = poly_attention(from_mat(z), layer).out;
    Mat want = embsum::testing::oracle_poly(z, codes, proj);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t k = 0; k < d; ++k) poly_err = std::max(poly_err, std::abs(out.at(a, k) - want[a][k]));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t m = 1 + rng() % 6, n = 1 + rng() % 5, d = 1 + rng() % 8;
    Mat a = rand_mat(m, d, rng), b = rand_mat(n, d, rng), ws = rand_mat(d, d, rng);
    const double s = gated_score(from_mat(a), from_mat(b), from_mat(ws)).s.item();
    score_err = std::max(score_err, std::abs(s - embsum::testing::oracle_gated_score(a, b, ws)));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t len = 2 + rng() % 8;
    Mat s = rand_mat(1, len, rng, 4.0);
    const std::size_t pos = rng() % len;
    const double l = nce_loss(Tensor({len}, s[0]), pos).item();
    nce_err = std::max(nce_err, std::abs(l - embsum::testing::oracle_nce(s[0], pos)));
  }
  const double uniform = std::abs(nce_loss(Tensor({5}, {0.7, 0.7, 0.7, 0.7, 0.7}), 0).item() - std::log(5.0));
  double single = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = 1 + rng() % 8;
    Mat a = rand_mat(1, d, rng), b = rand_mat(1, d, rng), ws = rand_mat(d, d, rng);
    const double s = gated_score(from_mat(a), from_mat(b), from_mat(ws)).s.item();
    single = std::max(single, std::abs(s - embsum::testing::dot(a[0], b[0])));
  }
  const bool ok = poly_err <= 1e-9 && score_err <= 1e-9 && nce_err <= 1e-9 && uniform <= 1e-12 && single <= 1e-12;
  report(2, "poly-attention, gated score and NCE against scalar oracles", ok,
         "max abs err poly " + sci(poly_err) + ", score " + sci(score_err) + ", nce " + sci(nce_err) +
             " (tol 1e-9); uniform NCE vs ln 5 " + sci(uniform) + ", m=n=1 vs inner product " + sci(single) +
             " (tol 1e-12)");
}

// ---------------------------------------------------------------------------
// 3. Metric oracles

void criterion_metrics() {
  std::mt19937_64 rng(3);
  double err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto [s, y] = embsum::testing::random_impression(rng, i % 2 == 0);
    ImpressionResult r{s, y};
    err = std::max(err, std::abs(*auc(r) - embsum::testing::oracle_auc(s, y)));
    err = std::max(err, std::abs(*mrr(r) - embsum::testing::oracle_mrr(s, y)));
    err = std::max(err, std::abs(*ndcg_at_k(r, 5) - embsum::testing::oracle_ndcg(s, y, 5)));
    err = std::max(err, std::abs(*ndcg_at_k(r, 10) - embsum::testing::oracle_ndcg(s, y, 10)));
  }
  std::size_t mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    auto a = embsum::testing::random_words(rng, 20, 6);
    auto b = embsum::testing::random_words(rng, 20, 6);
    if (b.empty()) b.push_back("w0");
    const auto got = rouge(embsum::testing::join_words(a), embsum::testing::join_words(b)).rougeL_f;
    if (lcs_length(a, b) != embsum::testing::oracle_lcs(a, b) || got != embsum::testing::oracle_rouge_l(a, b)) {
      ++mismatches;
    }
  }
  report(3, "AUC/MRR/nDCG@5,10 and ROUGE-L against brute-force oracles", err <= 1e-9 && mismatches == 0,
         "1000 impressions, max abs err " + sci(err) + " (tol 1e-9); 200 ROUGE-L pairs, " +
             std::to_string(mismatches) + " mismatches (must be 0)");
}

// ---------------------------------------------------------------------------
// 4-6. Synthetic learning, ablation ordering, summary quality

RunConfig desk_config(std::uint64_t seed) {
  RunConfig rc;
  rc.data.k_history = 12;
  rc.data.p_items = 4;
  rc.model.m = 8;
  rc.model.n = 4;
  rc.model.transformer.d_model = 32;
  rc.train.lambda = 0.05;
  rc.train.neg_ratio = 4;
  rc.train.epochs = 10;
  rc.train.lr = 2e-3;
  rc.train.batch_size = 8;
  rc.train.seed = seed;
  return rc;
}

struct SummaryStats {
  double rouge1 = 0.0;
  double lsum = 0.0;         // pooled per-token NLL, teacher forced
  double unigram_bound = 0.0;  // entropy of the held-out target unigram distribution
};

SummaryStats summary_stats(const EmbSumModel& model, const Dataset& ds,
                           const std::map<std::string, std::vector<std::size_t>>& generated) {
  SummaryStats st;
  st.rouge1 = summary_report(ds, generated).value().mean.rouge1_f;
  NoGradGuard ng;
  std::map<std::size_t, double> counts;
  double nll = 0.0, tokens = 0.0;
  for (const auto& [user, _] : generated) {
    const UserData& u = ds.users.at(user);
    if (u.summary_ids.empty() || u.sessions.empty()) continue;
    const double len = static_cast<double>(u.summary_ids.size() + 1);
    nll += model.encode_user(u, GlobalMode::kTeacherForced).sum_loss.item() * len;
    tokens += len;
    for (std::size_t t : u.summary_ids) counts[t] += 1.0;
    counts[kEos] += 1.0;
  }
  st.lsum = nll / tokens;
  for (const auto& [_, c] : counts) st.unigram_bound -= c / tokens * std::log(c / tokens);
  return st;
}

void criterion_learning() {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  const std::vector<std::string> variants = {"full", "no_cpe", "no_sessions", "upe_size_1", "no_sum_loss"};
  std::map<std::string, std::vector<double>> dev_auc;
  std::vector<double> test_auc, full_secs;
  std::vector<SummaryStats> sums;
  for (std::uint64_t seed : seeds) {
    SynthConfig sc;  // 200 users, 500 items, 8 topics, k=12, R=4
    sc.seed = seed;
    const Corpus corpus = synth_generate(sc).corpus;
    for (const auto& v : variants) {
      RunConfig rc = desk_config(seed);
      rc.model.ablations.no_cpe = v == "no_cpe";
      rc.model.ablations.no_sessions = v == "no_sessions";
      rc.model.ablations.upe_size_1 = v == "upe_size_1";
      rc.model.ablations.no_sum_loss = v == "no_sum_loss";
      const auto t0 = Clock::now();
      TrainedRun run = train_run(rc, corpus);
      dev_auc[v].push_back(run.result.best_dev_auc);
      std::string line = "  seed " + std::to_string(seed) + " " + v + ": best dev AUC " +
                         fmt(run.result.best_dev_auc) + " (epoch " + std::to_string(run.result.best_epoch) + ")";
      if (v == "full") {
        const double secs = seconds_since(t0);
        EvalResult ev = evaluate(run.model, run.dataset, run.dataset.test);
        test_auc.push_back(ev.metrics.auc);
        full_secs.push_back(secs);
        sums.push_back(summary_stats(run.model, run.dataset, ev.generated));
        line += ", test AUC " + fmt(ev.metrics.auc) + ", " + fmt(secs, 3) + " s, test ROUGE-1 " +
                fmt(sums.back().rouge1) + ", L_sum " + fmt(sums.back().lsum) + " vs unigram " +
                fmt(sums.back().unigram_bound);
      }
      std::cout << line << std::endl;
    }
  }

  std::size_t good = 0;
  double max_secs = 0.0;
  std::string aucs;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const bool fast = full_secs[i] < 600.0;
    good += (test_auc[i] >= 0.65 && fast) ? 1 : 0;
    max_secs = std::max(max_secs, full_secs[i]);
    aucs += (i ? ", " : "") + fmt(test_auc[i]);
  }
  report(4, "synthetic held-out AUC >= 0.65 in >= 4 of 5 seeds, < 10 min per seed", good >= 4,
         std::to_string(good) + "/5 seeds pass; test AUC [" + aucs + "]; slowest seed " + fmt(max_secs, 3) + " s");

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double full = mean(dev_auc["full"]);
  bool ordered = true;
  std::string detail = "full " + fmt(full);
  for (std::size_t i = 1; i < variants.size(); ++i) {
    const double m = mean(dev_auc[variants[i]]);
    ordered = ordered && full >= m;
    detail += ", " + variants[i] + " " + fmt(m);
  }
  report(5, "full model mean dev AUC >= every ablation", ordered, "mean best dev AUC: " + detail);

  bool sum_ok = true;
  std::string sd;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    sum_ok = sum_ok && sums[i].rouge1 >= 0.5 && sums[i].lsum < sums[i].unigram_bound;
    sd += (i ? "; " : "") + std::string("seed ") + std::to_string(seeds[i]) + " R1 " + fmt(sums[i].rouge1, 3) +
          ", L_sum " + fmt(sums[i].lsum, 3) + " < " + fmt(sums[i].unigram_bound, 3);
  }
  report(6, "held-out ROUGE-1 >= 0.5 and teacher-forced L_sum below the constant-unigram bound (every seed)",
         sum_ok, sd);
}

// ---------------------------------------------------------------------------
// 7. Offline scoring equivalence and embedding round trip

void criterion_offline() {
  SynthConfig sc;
  sc.seed = 9;
  const Corpus corpus = synth_generate(sc).corpus;
  RunConfig rc = desk_config(9);
  Vocab vocab = build_vocab(corpus, rc.data);
  Dataset ds = make_dataset(corpus, rc.data, rc.model, vocab);
  EmbSumModel model(rc.model, vocab, 9);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (auto& [_, t] : model.params().items())
    for (double& x : t.mutable_data()) x += nd(rng);

  const auto dir = fs::temp_directory_path() / "embsum_acceptance_offline";
  fs::remove_all(dir);
  fs::create_directories(dir);
  precompute_upe(model, ds).save((dir / "upe.embs").string());
  precompute_cpe(model, ds).save((dir / "cpe.embs").string());
  const EmbeddingFile upe = EmbeddingFile::load((dir / "upe.embs").string());
  const EmbeddingFile cpe = EmbeddingFile::load((dir / "cpe.embs").string());

  // Round trip: re-serialising the loaded files gives the same bytes.
  auto file_bytes = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  upe.save((dir / "upe2.embs").string());
  cpe.save((dir / "cpe2.embs").string());
  const bool bit_exact = file_bytes(dir / "upe.embs") == file_bytes(dir / "upe2.embs") &&
                         file_bytes(dir / "cpe.embs") == file_bytes(dir / "cpe2.embs");
  model.save((dir / "model.ckpt").string());
  const Tensor w_s = load_head(load_checkpoint((dir / "model.ckpt").string()));
  fs::remove_all(dir);

  NoGradGuard ng;
  std::map<std::string, Tensor> user_cache, item_cache;
  double err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto& user = upe.ids()[rng() % upe.size()];
    const auto& item = cpe.ids()[rng() % cpe.size()];
    if (!user_cache.count(user)) user_cache[user] = model.encode_user(ds.users.at(user), model.eval_mode()).upe;
    if (!item_cache.count(item)) item_cache[item] = model.encode_candidate(ds.item_tokens.at(item));
    const double direct = model.score(user_cache[user], item_cache[item]).s.item();
    const double offline = score_offline(upe, cpe, w_s, user, {item}).front().score;
    err = std::max(err, std::abs(direct - offline));
  }
  report(7, "offline scoring from stored embeddings equals in-model scoring; files round-trip",
         err <= 1e-9 && bit_exact,
         "1000 pairs, max abs diff " + sci(err) + " (tol 1e-9); round trip " +
             (bit_exact ? "bit-exact" : "NOT bit-exact"));
}

// ---------------------------------------------------------------------------
// 8. Property suites

TransformerConfig prop_tf() {
  TransformerConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.n_heads = 4;
  c.d_ff = 32;
  c.max_positions = 32;
  return c;
}

std::vector<std::size_t> rand_ids(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = 4 + rng() % 36;
  return v;
}

void criterion_properties() {
  const int kSeeds = 20;
  std::map<std::string, int> passed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 7919 + 1);
    ParamStore ps;
    Transformer tf(prop_tf(), ps, static_cast<std::uint64_t>(seed));
    auto cand = PolyAttention::create(ps, "cand", 4, 16, 8, static_cast<std::uint64_t>(seed) + 1);
    {  // causal mask
      auto cross = tf.encode(rand_ids(rng, 5 + rng() % 5)).states;
      auto dec = rand_ids(rng, 3 + rng() % 8);
      const std::size_t j = 1 + rng() % (dec.size() - 1);
      auto a = tf.decode(dec, cross).logits;
      dec[j] = dec[j] == 4 ? 5 : 4;
      auto b = tf.decode(dec, cross).logits;
      double err = 0.0;
      for (std::size_t i = 0; i < j * a.cols(); ++i) err = std::max(err, std::abs(a.data()[i] - b.data()[i]));
      passed["causal mask"] += err <= 1e-12;
    }
    {  // pad invariance: encoder states and CPE
      std::vector<std::size_t> item{kSos};
      auto body = rand_ids(rng, 1 + rng() % 10);
      item.insert(item.end(), body.begin(), body.end());
      item.push_back(kEos);
      std::vector<std::size_t> padded = item;
      std::vector<std::uint8_t> valid(item.size(), 1);
      for (std::size_t p = 0; p < 1 + rng() % 8; ++p) padded.push_back(kPad), valid.push_back(0);
      auto a = content_poly_embedding(tf, cand, item);
      auto b = content_poly_embedding(tf, cand, padded, valid);
      double err = 0.0;
      for (std::size_t i = 0; i < a.cpe.numel(); ++i) err = std::max(err, std::abs(a.cpe.data()[i] - b.cpe.data()[i]));
      for (std::size_t i = 0; i < a.token_states.numel(); ++i)
        err = std::max(err, std::abs(a.token_states.data()[i] - b.token_states.data()[i]));
      passed["pad invariance"] += err <= 1e-12;
    }
    {  // convex hull of poly-attention outputs
      const std::size_t r = 1 + rng() % 10, d = 1 + rng() % 8;
      Mat z = rand_mat(r, d, rng, 3.0);
      PolyAttention layer{from_mat(rand_mat(5, 4, rng, 3.0)), from_mat(rand_mat(d, 4, rng))};
      auto p = poly_attention(from_mat(z), layer);
      bool ok = true;
      for (std::size_t a = 0; a < 5; ++a) {
        double wsum = 0.0;
        for (std::size_t i = 0; i < r; ++i) ok = ok && p.weights.at(a, i) >= 0.0, wsum += p.weights.at(a, i);
        ok = ok && std::abs(wsum - 1.0) <= 1e-12;
        for (std::size_t k = 0; k < d; ++k) {
          double rec = 0.0, lo = z[0][k], hi = z[0][k];
          for (std::size_t i = 0; i < r; ++i) {
            rec += p.weights.at(a, i) * z[i][k];
            lo = std::min(lo, z[i][k]);
            hi = std::max(hi, z[i][k]);
          }
          ok = ok && std::abs(rec - p.out.at(a, k)) <= 1e-12 && p.out.at(a, k) >= lo - 1e-12 &&
               p.out.at(a, k) <= hi + 1e-12;
        }
      }
      passed["convex hull"] += ok;
    }
    {  // softmax normalization, including large logits and masks
      const std::size_t rows = 1 + rng() % 6, cols = 1 + rng() % 12;
      const double scale = std::pow(10.0, static_cast<double>(rng() % 4));
      Tensor x = from_mat(rand_mat(rows, cols, rng, scale));
      std::vector<std::uint8_t> keep(rows * cols);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) keep[i * cols + j] = rng() % 2;
        keep[i * cols + rng() % cols] = 1;
      }
      bool ok = true;
      for (const Tensor& s : {softmax(x), masked_softmax(x, keep)}) {
        for (std::size_t i = 0; i < rows; ++i) {
          double tot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) ok = ok && s.at(i, j) >= 0.0, tot += s.at(i, j);
          ok = ok && std::abs(tot - 1.0) <= 1e-12;
        }
      }
      Tensor m = masked_softmax(x, keep);
      for (std::size_t i = 0; i < keep.size(); ++i) ok = ok && (keep[i] || m.data()[i] == 0.0);
      passed["softmax normalization"] += ok;
    }
    {  // monotone transforms leave every ranking metric unchanged
      bool ok = true;
      for (int k = 0; k < 20; ++k) {
        auto [s, y] = embsum::testing::random_impression(rng, false);
        std::vector<double> e = s, f = s;
        for (double& x : e) x = std::exp(x);
        for (double& x : f) x = 0.25 * x + 3.0;
        for (const auto& t : {e, f}) {
          ImpressionResult a{s, y}, b{t, y};
          ok = ok && *auc(a) == *auc(b) && *mrr(a) == *mrr(b) && *ndcg_at_k(a, 5) == *ndcg_at_k(b, 5) &&
               *ndcg_at_k(a, 10) == *ndcg_at_k(b, 10);
        }
      }
      passed["monotone-transform ranking invariance"] += ok;
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, n] : passed) {
    ok = ok && n == kSeeds;
    detail += (detail.empty() ? "" : "; ") + name + " " + std::to_string(n) + "/" + std::to_string(kSeeds);
  }
  report(8, "property suites over 20 seeds each", ok && passed.size() == 5, detail);
}

// ---------------------------------------------------------------------------
// 9. Hyperparameter sweep through the CLI

void criterion_sweep() {
  const auto dir = fs::temp_directory_path() / "embsum_acceptance_sweep";
  fs::remove_all(dir);
  const std::string cli = EMBSUM_CLI;
  const auto t0 = Clock::now();
  const std::string synth = cli + " synth --seed 11 --out " + (dir / "data").string() + " > /dev/null";
  const std::string sweep = cli + " sweep --data " + (dir / "data").string() + " --out " + (dir / "sweep").string() +
                            " --train-fraction 0.1 --k-history 12 --p-items 4 --lr 2e-3 --batch-size 8 > " +
                            (dir / "sweep.stdout").string();
  const int rc = std::system(synth.c_str()) == 0 ? std::system(sweep.c_str()) : -1;
  const double secs = seconds_since(t0);
  std::size_t rows = 0, complete = 0;
  std::set<std::string> points;
  std::ifstream tsv(dir / "sweep" / "sweep.tsv");
  std::string line;
  std::getline(tsv, line);
  const bool header = line.rfind("lambda\tn\tm\tdev_auc\tdev_mrr\tdev_ndcg5\tdev_ndcg10", 0) == 0;
  while (std::getline(tsv, line)) {
    if (line.empty()) continue;
    ++rows;
    std::istringstream ls(line);
    std::vector<std::string> cols;
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    bool finite = cols.size() >= 7;
    for (std::size_t i = 3; i < 7 && finite; ++i) finite = std::isfinite(std::stod(cols[i]));
    if (finite) {
      ++complete;
      points.insert(cols[0] + "/" + cols[1] + "/" + cols[2]);
    }
  }
  fs::remove_all(dir);
  const bool ok = rc == 0 && header && rows == 27 && complete == 27 && points.size() == 27 && secs < 1800.0;
  report(9, "3x3x3 sweep on a 10% synthetic subset emits a complete dev-metric table in < 30 min", ok,
         "exit " + std::to_string(rc) + ", " + std::to_string(complete) + "/27 complete rows, " +
             std::to_string(points.size()) + " distinct grid points, " + fmt(secs, 4) + " s (limit 1800 s)");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void()>>> all = {
      {"grad", criterion_grad},         {"oracles", criterion_oracles}, {"metrics", criterion_metrics},
      {"learning", criterion_learning}, {"offline", criterion_offline}, {"properties", criterion_properties},
      {"sweep", criterion_sweep}};
  std::set<std::string> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(argv[i]);
  if (wanted.empty()) wanted.insert("all");
  for (const auto& w : wanted) {
    bool known = w == "all";
    for (const auto& [name, _] : all) known = known || name == w;
    if (!known) {
      std::cerr << "unknown criterion group '" << w << "'\n";
      return 2;
    }
  }
  for (const auto& [name, fn] : all) {
    if (!wanted.count("all") && !wanted.count(name)) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      std::cout << "FAIL  " << name << ": exception " << e.what() << std::endl;
      ++g_failures;
    }
  }
  return g_failures == 0 ? 0 : 1;
}
