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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "embsum/trainer.hpp"
#include "test_util.hpp"

namespace embsum {
namespace {

using testing::from_mat;
using testing::Mat;
using testing::rand_mat;
using testing::to_mat;

PolyAttention fixed_poly(const Mat& codes, const Mat& proj) {
  return {from_mat(codes, true), from_mat(proj, true)};
}

// ---------------------------------------------------------------------------
// Poly-attention

TEST(PolyAttention, SingleRowReturnsThatRow) {
  Mat z = {{0.3, -1.2, 2.0}};
  auto p = poly_attention(from_mat(z), fixed_poly({{1, 2}, {-3, 0.5}}, {{1, 0}, {0, 1}, {1, 1}}));
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.out.at(a, k), z[0][k], 1e-15);
}

TEST(PolyAttention, ZeroCodeIsUniform) {
  auto p = poly_attention(from_mat({{1, 0}, {0, 1}}), fixed_poly({{0, 0}}, {{1, 0}, {0, 1}}));
  EXPECT_DOUBLE_EQ(p.weights.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.weights.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(p.out.at(0, 0), 0.5);
}

TEST(PolyAttention, WorkedExample) {
  // keys = tanh(I) so logits are [10·tanh(1), 0].
  auto layer = fixed_poly({{10, 0}}, {{1, 0}, {0, 1}});
  Tensor keys = tanh(matmul(from_mat({{1, 0}, {0, 1}}), layer.proj));
  Tensor logits = matmul_nt(layer.codes, keys);
  EXPECT_NEAR(logits.at(0, 0), 7.6159, 1e-4);
  EXPECT_EQ(logits.at(0, 1), 0.0);
  auto p = poly_attention(from_mat({{1, 0}, {0, 1}}), layer);
  EXPECT_NEAR(p.weights.at(0, 0), 0.99951, 1e-5);
  EXPECT_NEAR(p.weights.at(0, 1), 0.00049, 1e-5);
}

TEST(PolyAttention, MaskExcludesRows) {
  std::mt19937_64 rng(1);
  Mat z = rand_mat(4, 3, rng), codes = rand_mat(2, 2, rng), proj = rand_mat(3, 2, rng);
  const std::uint8_t valid[] = {1, 0, 1, 0};
  auto masked = poly_attention(from_mat(z), fixed_poly(codes, proj), valid);
  auto kept = poly_attention(from_mat({z[0], z[2]}), fixed_poly(codes, proj));
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(masked.out.at(a, k), kept.out.at(a, k), 1e-15);
  EXPECT_THROW(poly_attention(Tensor::zeros({0, 3}), fixed_poly(codes, proj)), DimensionError);
}

class PolySeeds : public ::testing::TestWithParam<int> {};

TEST_P(PolySeeds, MatchesOracleAndStaysInConvexHull) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  const std::size_t r = 1 + rng() % 7, d = 1 + rng() % 6, m = 1 + rng() % 5, c = 1 + rng() % 4;
  Mat z = rand_mat(r, d, rng), codes = rand_mat(m, c, rng, 2.0), proj = rand_mat(d, c, rng);
  auto p = poly_attention(from_mat(z), fixed_poly(codes, proj));
  Mat want = testing::oracle_poly(z, codes, proj);
  for (std::size_t a = 0; a < m; ++a) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      EXPECT_GE(p.weights.at(a, i), 0.0);
      wsum += p.weights.at(a, i);
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    for (std::size_t k = 0; k < d; ++k) {
      EXPECT_NEAR(p.out.at(a, k), want[a][k], 1e-12);
      double lo = z[0][k], hi = z[0][k];
      for (std::size_t i = 0; i < r; ++i) lo = std::min(lo, z[i][k]), hi = std::max(hi, z[i][k]);
      EXPECT_GE(p.out.at(a, k), lo - 1e-12);
      EXPECT_LE(p.out.at(a, k), hi + 1e-12);
    }
  }
}

TEST_P(PolySeeds, RowPermutationEquivariance) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 100);
  const std::size_t r = 2 + rng() % 6;
  Mat z = rand_mat(r, 4, rng), codes = rand_mat(3, 2, rng), proj = rand_mat(4, 2, rng);
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat zp;
  for (std::size_t i : perm) zp.push_back(z[i]);
  auto a = poly_attention(from_mat(z), fixed_poly(codes, proj));
  auto b = poly_attention(from_mat(zp), fixed_poly(codes, proj));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.out.at(c, k), b.out.at(c, k), 1e-12);
    for (std::size_t i = 0; i < r; ++i) EXPECT_NEAR(b.weights.at(c, i), a.weights.at(c, perm[i]), 1e-15);
  }
}

TEST_P(PolySeeds, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 200);
  ParamStore ps;
  auto layer = PolyAttention::create(ps, "p", 3, 4, 2, static_cast<std::uint64_t>(GetParam()));
  for (auto& [_, t] : ps.items()) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& x : t.mutable_data()) x = nd(rng);
  }
  Tensor& z = ps.add("z", from_mat(rand_mat(5, 4, rng)));
  Tensor target = from_mat(rand_mat(3, 4, rng));
  auto rep = grad_check([&] { return sum(mul(poly_attention(z, layer).out, target)); }, ps);
  EXPECT_TRUE(rep.passed()) << rep.max_rel_err();
}

INSTANTIATE_TEST_SUITE_P(Seeds, PolySeeds, ::testing::Range(0, 20));

// ---------------------------------------------------------------------------
// Scoring head and losses

TEST(MatchScores, RowMajorExample) {
  Tensor k = match_scores(from_mat({{1, 0}, {0, 1}}), from_mat({{1, 0}, {0, 1}, {1, 1}}));
  EXPECT_EQ(std::vector<double>(k.data().begin(), k.data().end()), (std::vector<double>{1, 0, 1, 0, 1, 1}));
  EXPECT_THROW(match_scores(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
}

TEST(GatedScore, SingleCodeIsInnerProduct) {
  std::mt19937_64 rng(4);
  Mat a = rand_mat(1, 5, rng), b = rand_mat(1, 5, rng);
  auto s = gated_score(from_mat(a), from_mat(b), from_mat(rand_mat(5, 5, rng)));
  EXPECT_DOUBLE_EQ(s.weights.item(), 1.0);
  EXPECT_NEAR(s.s.item(), testing::dot(a[0], b[0]), 1e-12);
}

TEST(GatedScore, ZeroGateAveragesK) {
  std::mt19937_64 rng(5);
  Tensor a = from_mat(rand_mat(3, 4, rng)), b = from_mat(rand_mat(2, 4, rng));
  auto s = gated_score(a, b, Tensor::zeros({4, 4}));
  double mean = 0.0;
  for (double x : s.k.data()) mean += x / 6.0;
  EXPECT_NEAR(s.s.item(), mean, 1e-14);
  for (double w : s.weights.data()) EXPECT_NEAR(w, 1.0 / 6.0, 1e-15);
  EXPECT_THROW(gated_score(a, b, Tensor::zeros({4, 3})), DimensionError);
}

class ScoreSeeds : public ::testing::TestWithParam<int> {};

TEST_P(ScoreSeeds, MatchesScalarOracle) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  Mat a = rand_mat(2, 4, rng), b = rand_mat(3, 4, rng), w = rand_mat(4, 4, rng);
  auto s = gated_score(from_mat(a), from_mat(b), from_mat(w));
  EXPECT_NEAR(s.s.item(), testing::oracle_gated_score(a, b, w), 1e-12);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.k.data()[i * 3 + j], testing::dot(a[i], b[j]), 1e-12);
}

TEST_P(ScoreSeeds, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 50);
  ParamStore ps;
  Tensor& a = ps.add("a", from_mat(rand_mat(2, 3, rng)));
  Tensor& b = ps.add("b", from_mat(rand_mat(2, 3, rng)));
  Tensor& w = ps.add("w", from_mat(rand_mat(3, 3, rng)));
  auto rep = grad_check([&] { return gated_score(a, b, w).s; }, ps);
  EXPECT_TRUE(rep.passed()) << rep.max_rel_err();
}

TEST_P(ScoreSeeds, NceShiftInvariance) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) + 70);
  Mat s = rand_mat(1, 5, rng, 3.0);
  std::vector<double> shifted = s[0];
  for (double& x : shifted) x += 17.5;
  const double base = nce_loss(Tensor({5}, s[0]), 2).item();
  EXPECT_NEAR(base, testing::oracle_nce(s[0], 2), 1e-12);
  EXPECT_NEAR(nce_loss(Tensor({5}, shifted), 2).item(), base, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Seeds, ScoreSeeds, ::testing::Range(0, 20));

TEST(Nce, Examples) {
  EXPECT_NEAR(nce_loss(Tensor({5}, {0.3, 0.3, 0.3, 0.3, 0.3}), 0).item(), std::log(5.0), 1e-12);
  EXPECT_NEAR(nce_loss(Tensor({3}, {2, 0, 0}), 0).item(), 0.23954476622188453, 1e-15);
  EXPECT_LT(nce_loss(Tensor({3}, {60, 0, 0}), 0).item(), 1e-25);
  EXPECT_THROW(nce_loss(Tensor({1}, {1}), 0), std::invalid_argument);
  EXPECT_THROW(nce_loss(Tensor({2}, {1, 2}), 2), std::out_of_range);
}

TEST(TotalLoss, Examples) {
  Tensor nce({}, {1.0}), sum({}, {2.0});
  EXPECT_DOUBLE_EQ(total_loss(nce, sum, 0.05).item(), 1.1);
  EXPECT_DOUBLE_EQ(total_loss(nce, sum, 0.0).item(), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(nce, Tensor(), 0.05).item(), 1.0);
  EXPECT_THROW(total_loss(nce, sum, -1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// User tower

TransformerConfig tiny_tf(std::size_t vocab = 20) {
  TransformerConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 16;
  c.max_positions = 32;
  return c;
}

TEST(SummaryLoss, UniformLogitsGiveLogV) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 1);
  std::mt19937_64 rng(1);
  Tensor states = from_mat(rand_mat(4, 8, rng));
  for (double& x : ps.at("transformer.tok_emb").mutable_data()) x = 0.0;
  const std::size_t y[] = {5, 6, 7};
  EXPECT_NEAR(summarization_loss(tf, states, y).item(), std::log(20.0), 1e-12);
  const std::size_t one[] = {9};
  auto [loss, vec] = teacher_forced(tf, states, one);
  EXPECT_NEAR(loss.item(), std::log(20.0), 1e-12);
  EXPECT_EQ(vec.shape(), (Shape{1, 8}));
  EXPECT_THROW(summarization_loss(tf, states, {}), std::invalid_argument);
}

TEST(SummaryLoss, OverfitsOneSummaryAndGeneratesIt) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 2);
  std::mt19937_64 rng(2);
  Tensor states = from_mat(rand_mat(4, 8, rng));
  const std::vector<std::size_t> y = {5, 11, 7};
  Adam adam(AdamOptions{.lr = 1e-2});
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    ps.zero_grad();
    Tensor l = summarization_loss(tf, states, y);
    l.backward();
    adam.step(ps);
    loss = l.item();
  }
  EXPECT_LT(loss, 0.1);
  NoGradGuard ng;
  auto g = greedy_generate(tf, states, 10);
  EXPECT_EQ(g.generated, y);
  EXPECT_EQ(g.position, 3u);  // [EOS] emitted at step 3
  auto tfg = global_representation(tf, states, y, GlobalMode::kTeacherForced);
  EXPECT_EQ(tfg.position, 3u);
  // Same decoder row either way once generation reproduces the summary.
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(g.vec.at(0, c), tfg.vec.at(0, c), 1e-12);
}

TEST(GlobalRepresentation, Modes) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 3);
  std::mt19937_64 rng(3);
  Tensor states = from_mat(rand_mat(4, 8, rng));
  const std::size_t y[] = {4, 5, 6, 7, 8};
  EXPECT_EQ(global_representation(tf, states, y, GlobalMode::kTeacherForced).position, 5u);
  auto sos = global_representation(tf, states, y, GlobalMode::kSosOnly);
  EXPECT_EQ(sos.vec.shape(), (Shape{1, 8}));
  EXPECT_FALSE(sos.sum_loss.defined());
  auto gen = global_representation(tf, states, y, GlobalMode::kGenerate, 4);
  EXPECT_LE(gen.generated.size(), 4u);
  for (std::size_t t : gen.generated) EXPECT_GE(t, kNumSpecial - 1);  // never PAD or SOS
  EXPECT_THROW(global_representation(tf, states, {}, GlobalMode::kTeacherForced), std::invalid_argument);
  EXPECT_EQ(global_mode_from_name("infer_generate"), GlobalMode::kGenerate);
  EXPECT_THROW(global_mode_from_name("x"), std::invalid_argument);
}

Sessions random_sessions(std::mt19937_64& rng, std::size_t n_sessions, std::size_t vocab = 20) {
  std::uniform_int_distribution<std::size_t> tok(4, vocab - 1);
  Sessions s(n_sessions);
  for (auto& sess : s) {
    const std::size_t items = 1 + rng() % 3;
    for (std::size_t i = 0; i < items; ++i) {
      std::vector<std::size_t> item{kSos};
      for (std::size_t j = 0; j < 1 + rng() % 4; ++j) item.push_back(tok(rng));
      item.push_back(kEos);
      sess.push_back(item);
    }
  }
  return s;
}

TEST(UserTower, SessionsAreIndependent) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 4);
  std::mt19937_64 rng(4);
  Sessions s = random_sessions(rng, 2);
  auto a = encode_sessions(tf, s);
  s[1][0][1] = s[1][0][1] == 4 ? 5 : 4;
  auto b = encode_sessions(tf, s);
  const std::size_t first = s[0].size();
  for (std::size_t i = 0; i < first; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.content_vecs.at(i, c), b.content_vecs.at(i, c));
  EXPECT_EQ(a.content_vecs.rows(), s[0].size() + s[1].size());
  Sessions bad = {{{7, 8}}};
  EXPECT_THROW(encode_sessions(tf, bad), std::invalid_argument);
  EXPECT_THROW(encode_sessions(tf, Sessions{}), ColdStartError);
}

TEST(UserTower, ShapesIdenticalUsersAndSingleCode) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 5);
  auto layer = PolyAttention::create(ps, "u", 3, 8, 4, 9);
  auto one = PolyAttention::create(ps, "u1", 1, 8, 4, 9);
  std::mt19937_64 rng(5);
  Sessions s = random_sessions(rng, 3);
  const std::size_t y[] = {6, 7};
  auto a = user_poly_embedding(tf, layer, s, y, GlobalMode::kTeacherForced);
  auto b = user_poly_embedding(tf, layer, s, y, GlobalMode::kTeacherForced);
  std::size_t k = 0;
  for (const auto& sess : s) k += sess.size();
  EXPECT_EQ(a.z.rows(), k + 1);
  EXPECT_EQ(a.upe.shape(), (Shape{3, 8}));
  EXPECT_TRUE(a.sum_loss.defined());
  for (std::size_t i = 0; i < a.upe.numel(); ++i) EXPECT_EQ(a.upe.data()[i], b.upe.data()[i]);
  auto c = user_poly_embedding(tf, one, s, y, GlobalMode::kTeacherForced);
  EXPECT_EQ(c.upe.shape(), (Shape{1, 8}));
}

TEST(UserTower, ColdStartUsesSosVectorOnly) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 6);
  auto layer = PolyAttention::create(ps, "u", 3, 8, 4, 9);
  auto u = user_poly_embedding(tf, layer, Sessions{}, {}, GlobalMode::kGenerate);
  EXPECT_TRUE(u.cold_start);
  EXPECT_EQ(u.z.rows(), 1u);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(u.upe.at(a, c), u.z.at(0, c), 1e-15);
}

// ---------------------------------------------------------------------------
// Candidate tower

TEST(CandidateTower, ShapesAndSingleToken) {
  ParamStore ps;
  TransformerConfig c = tiny_tf();
  c.d_model = 32;
  c.n_heads = 4;
  Transformer tf(c, ps, 7);
  auto layer = PolyAttention::create(ps, "c", 4, 32, 8, 3);
  const std::size_t item[] = {kSos, 5, 6, 7, kEos};
  auto enc = content_poly_embedding(tf, layer, item);
  EXPECT_EQ(enc.cpe.shape(), (Shape{4, 32}));
  const std::size_t single[] = {kSos};
  auto s = content_poly_embedding(tf, layer, single);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t k = 0; k < 32; ++k) EXPECT_DOUBLE_EQ(s.cpe.at(a, k), s.token_states.at(0, k));
  EXPECT_THROW(content_poly_embedding(tf, layer, {}), std::invalid_argument);
}

TEST(CandidateTower, SosEmbeddingIsRowZeroAndDiffersFromCpe) {
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, 8);
  auto layer = PolyAttention::create(ps, "c", 2, 8, 4, 3);
  const std::size_t item[] = {kSos, 5, 6, 7, kEos};
  auto enc = content_poly_embedding(tf, layer, item);
  Tensor sos = sos_embedding(tf, item);
  EXPECT_EQ(sos.shape(), (Shape{1, 8}));
  double diff = 0.0;
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(sos.at(0, k), enc.token_states.at(0, k));
    diff += std::abs(sos.at(0, k) - enc.cpe.at(0, k));
  }
  EXPECT_GT(diff, 1e-6);
  const std::size_t no_sos[] = {5, 6};
  EXPECT_THROW(sos_embedding(tf, no_sos), std::invalid_argument);
}

class CandSeeds : public ::testing::TestWithParam<int> {};

TEST_P(CandSeeds, PadInvariance) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  ParamStore ps;
  Transformer tf(tiny_tf(), ps, static_cast<std::uint64_t>(GetParam()));
  auto layer = PolyAttention::create(ps, "c", 3, 8, 4, 3);
  std::vector<std::size_t> item{kSos};
  for (std::size_t i = 0; i < 1 + rng() % 8; ++i) item.push_back(4 + rng() % 16);
  item.push_back(kEos);
  auto base = content_poly_embedding(tf, layer, item);
  std::vector<std::uint8_t> valid(item.size(), 1);
  auto padded = item;
  for (std::size_t i = 0; i < 1 + rng() % 6; ++i) {
    padded.push_back(kPad);
    valid.push_back(0);
  }
  auto p = content_poly_embedding(tf, layer, padded, valid);
  for (std::size_t i = 0; i < base.cpe.numel(); ++i) EXPECT_NEAR(base.cpe.data()[i], p.cpe.data()[i], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Seeds, CandSeeds, ::testing::Range(0, 20));

// ---------------------------------------------------------------------------
// Full model

TEST(Model, ParameterCountsAndSharedEncoder) {
  auto w = testing::tiny_world();
  const ModelConfig mc = testing::tiny_model_config();
  EmbSumModel full(mc, w.vocab, 1);
  TransformerConfig tc = mc.transformer;
  tc.vocab_size = w.vocab.size();
  const std::size_t d = 16, c = 8;
  // One encoder: no second copy of the transformer weights.
  EXPECT_EQ(full.params().count(), tc.parameter_count() + (4 + d) * c + (2 + d) * c + d * d);

  ModelConfig one = mc;
  one.ablations.upe_size_1 = true;
  EmbSumModel m1(one, w.vocab, 1);
  EXPECT_EQ(full.params().count() - m1.params().count(), (mc.m - 1) * mc.c_dim);

  ModelConfig nocpe = mc;
  nocpe.ablations.no_cpe = true;
  EmbSumModel m2(nocpe, w.vocab, 1);
  EXPECT_EQ(full.params().count() - m2.params().count(), (2 + d) * c);
  const auto& item = w.ds.item_tokens.begin()->second;
  EXPECT_EQ(m2.encode_candidate(item).shape(), (Shape{1, d}));
  EXPECT_EQ(full.encode_candidate(item).shape(), (Shape{2, d}));
}

TEST(Model, AblationModes) {
  auto w = testing::tiny_world();
  ModelConfig mc = testing::tiny_model_config();
  EmbSumModel full(mc, w.vocab, 1);
  EXPECT_EQ(full.train_mode(), GlobalMode::kTeacherForced);
  EXPECT_EQ(full.eval_mode(), GlobalMode::kGenerate);
  mc.ablations.no_sum_loss = true;
  EmbSumModel ns(mc, w.vocab, 1);
  EXPECT_EQ(ns.train_mode(), GlobalMode::kSosOnly);
  EXPECT_EQ(ns.eval_mode(), GlobalMode::kSosOnly);
  const auto& u = w.ds.users.begin()->second;
  EXPECT_FALSE(ns.encode_user(u, ns.train_mode()).sum_loss.defined());
}

TEST(Model, NoSumLossTotalIsNceOnly) {
  auto w = testing::tiny_world(4);
  ModelConfig mc = testing::tiny_model_config();
  mc.ablations.no_sum_loss = true;
  EmbSumModel model(mc, w.vocab, 1);
  std::mt19937_64 rng(1);
  std::vector<TrainInstance> batch;
  for (const auto& imp : w.ds.train)
    for (auto& inst : sample_negatives(imp, 2, rng)) batch.push_back(inst);
  auto lo = batch_loss(model, w.ds, batch, 0.05);
  auto hi = batch_loss(model, w.ds, batch, 5.0);
  EXPECT_EQ(lo.sum, 0.0);
  EXPECT_DOUBLE_EQ(lo.loss.item(), lo.nce);
  EXPECT_EQ(lo.loss.item(), hi.loss.item());
}

TEST(Model, CheckpointRoundTripScoresIdentically) {
  auto w = testing::tiny_world(6);
  EmbSumModel model(testing::tiny_model_config(), w.vocab, 11);
  const auto path = std::filesystem::temp_directory_path() / "embsum_model_rt.ckpt";
  model.save(path.string(), {{"k", 1}});
  EmbSumModel back = EmbSumModel::load(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.vocab().tokens(), w.vocab.tokens());
  const auto& u = w.ds.users.begin()->second;
  const auto& item = w.ds.item_tokens.begin()->second;
  NoGradGuard ng;
  const double a = model.score(model.encode_user(u, GlobalMode::kGenerate).upe, model.encode_candidate(item)).s.item();
  const double b = back.score(back.encode_user(u, GlobalMode::kGenerate).upe, back.encode_candidate(item)).s.item();
  EXPECT_EQ(a, b);
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, LossDecreasesOnTwoUsers) {
  auto w = testing::tiny_world(2, 5);
  std::vector<TrainInstance> batch;
  std::mt19937_64 rng(1);
  for (const auto& imp : w.synth.corpus.impressions)
    for (auto& inst : sample_negatives(imp, 2, rng)) batch.push_back(inst);
  ASSERT_FALSE(batch.empty());
  EmbSumModel model(testing::tiny_model_config(), w.vocab, 3);
  Adam adam(AdamOptions{.lr = 1e-3});
  std::vector<double> losses;
  for (int step = 0; step <= 20; ++step) {
    model.params().zero_grad();
    auto bl = batch_loss(model, w.ds, batch, 0.05);
    bl.loss.backward();
    clip_grad_norm(model.params(), 1.0);
    adam.step(model.params());
    losses.push_back(bl.loss.item());
  }
  int decreases = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) decreases += losses[i] < losses[i - 1];
  EXPECT_GE(decreases, 15) << "first " << losses.front() << " last " << losses.back();
}

TEST(Train, BatchLossEqualsPerInstanceMean) {
  auto w = testing::tiny_world(4);
  EmbSumModel model(testing::tiny_model_config(), w.vocab, 3);
  std::mt19937_64 rng(2);
  std::vector<TrainInstance> batch;
  for (const auto& imp : w.ds.train)
    for (auto& inst : sample_negatives(imp, 2, rng)) batch.push_back(inst);
  ASSERT_GT(batch.size(), 1u);
  const double joint = batch_loss(model, w.ds, batch, 0.3).loss.item();
  double mean = 0.0;
  for (const auto& inst : batch) mean += batch_loss(model, w.ds, {inst}, 0.3).loss.item();
  mean /= static_cast<double>(batch.size());
  EXPECT_NEAR(joint, mean, 1e-12);
}

TEST(Train, ConfigDefaultsAndJson) {
  TrainConfig c;
  EXPECT_EQ(c.resolved_batch_size(4999), 32u);
  EXPECT_EQ(c.resolved_batch_size(5000), 128u);
  c.batch_size = 7;
  EXPECT_EQ(c.resolved_batch_size(100000), 7u);
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(back.batch_size, std::optional<std::size_t>(7));
  EXPECT_TRUE(nlohmann::json(TrainConfig{}).at("batch_size").is_null());
  c.neg_ratio = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  TrainConfig bad;
  bad.lambda = -0.1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Train, ShortRunIsDeterministic) {
  auto w = testing::tiny_world(10);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.neg_ratio = 2;
  EmbSumModel a(testing::tiny_model_config(), w.vocab, 1), b(testing::tiny_model_config(), w.vocab, 1);
  auto ra = train(a, w.ds, tc), rb = train(b, w.ds, tc);
  EXPECT_EQ(ra.step_losses, rb.step_losses);
  EXPECT_EQ(ra.epochs.size(), 2u);
  if (!w.ds.dev.empty()) EXPECT_GE(ra.best_epoch, 1u);
}

}  // namespace
}  // namespace embsum
