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

// embsum: synth | train | evaluate | precompute | score | summarize | sweep
//
// Every command that takes --out writes config.json there (the resolved
// arguments) next to its outputs. On failure the files written so far are
// removed and a JSON error object goes to stderr.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "embsum/embstore.hpp"
#include "embsum/pipeline.hpp"
#include "embsum/synth.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace embsum;

namespace {

// Tracks files a command writes so a failed run leaves nothing behind.
class Outputs {
 public:
  void set_dir(const std::string& dir) {
    if (dir.empty()) throw std::invalid_argument("--out is required");
    dir_ = dir;
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }
  fs::path path(const std::string& name) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    return p;
  }
  void write_json(const std::string& name, const json& j) {
    std::ofstream os(path(name));
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + name);
  }
  void track_dir(const std::string& name) { files_.push_back(dir_ / name); }
  void commit() { committed_ = true; }
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove_all(f, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return json::parse(is);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

// ---------------------------------------------------------------------------
// Run-config overrides shared by train and sweep

struct Overrides {
  std::string config, data, out, tpl, custom_tpl, optimizer;
  double lr = 0, lambda = 0, train_fraction = 0;
  std::size_t batch_size = 0, epochs = 0, neg_ratio = 0, m = 0, n = 0, c_dim = 0, d_model = 0,
              k_history = 0, p_items = 0, vocab_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> ablations;
  CLI::App* app = nullptr;

  void attach(CLI::App* sub) {
    app = sub;
    sub->add_option("--config", config, "JSON run configuration");
    sub->add_option("--data", data, "corpus directory");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--lr", lr);
    sub->add_option("--batch-size", batch_size);
    sub->add_option("--epochs", epochs);
    sub->add_option("--lambda", lambda);
    sub->add_option("--neg-ratio", neg_ratio);
    sub->add_option("--seed", seed);
    sub->add_option("--optimizer", optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    sub->add_option("--m", m, "user codes");
    sub->add_option("--n", n, "candidate codes");
    sub->add_option("--c-dim", c_dim);
    sub->add_option("--d-model", d_model);
    sub->add_option("--k-history", k_history);
    sub->add_option("--p-items", p_items, "items per session");
    sub->add_option("--vocab-size", vocab_size);
    sub->add_option("--template", tpl)->check(CLI::IsMember({"mind", "goodreads", "custom"}));
    sub->add_option("--custom-template", custom_tpl);
    sub->add_option("--train-fraction", train_fraction);
    sub->add_option("--ablation", ablations)
        ->check(CLI::IsMember({"no_cpe", "no_sessions", "upe_size_1", "no_sum_loss"}));
  }

  bool given(const char* flag) const { return app->count(flag) > 0; }

  RunConfig resolve() const {
    RunConfig c;
    if (!config.empty()) c = read_json_file(config).get<RunConfig>();
    if (given("--data")) c.data_dir = data;
    if (given("--out")) c.out_dir = out;
    if (given("--lr")) c.train.lr = lr;
    if (given("--batch-size")) c.train.batch_size = batch_size;
    if (given("--epochs")) c.train.epochs = epochs;
    if (given("--lambda")) c.train.lambda = lambda;
    if (given("--neg-ratio")) c.train.neg_ratio = neg_ratio;
    if (given("--seed")) c.train.seed = seed;
    if (given("--optimizer")) c.train.optimizer = optimizer;
    if (given("--m")) c.model.m = m;
    if (given("--n")) c.model.n = n;
    if (given("--c-dim")) c.model.c_dim = c_dim;
    if (given("--d-model")) c.model.transformer.d_model = d_model;
    if (given("--k-history")) c.data.k_history = k_history;
    if (given("--p-items")) c.data.p_items = p_items;
    if (given("--vocab-size")) c.data.vocab_size = vocab_size;
    if (given("--template")) c.data.template_name = tpl;
    if (given("--custom-template")) c.data.custom_template = custom_tpl;
    if (given("--train-fraction")) c.train_fraction = train_fraction;
    for (const auto& a : ablations) {
      if (a == "no_cpe") c.model.ablations.no_cpe = true;
      if (a == "no_sessions") c.model.ablations.no_sessions = true;
      if (a == "upe_size_1") c.model.ablations.upe_size_1 = true;
      if (a == "no_sum_loss") c.model.ablations.no_sum_loss = true;
    }
    if (c.data_dir.empty()) throw std::invalid_argument("--data (or data_dir in the config) is required");
    if (c.out_dir.empty()) throw std::invalid_argument("--out (or out_dir in the config) is required");
    validate(c);
    return c;
  }
};

json config_echo(const char* command, const RunConfig& c) {
  json j = c;
  j["command"] = command;
  return j;
}

// ---------------------------------------------------------------------------

int cmd_synth(const SynthConfig& sc, const std::string& out) {
  Outputs o;
  o.set_dir(out);
  json echo = sc;
  echo["command"] = "synth";
  for (const char* f : {"news.tsv", "behaviors_train.tsv", "behaviors_dev.tsv", "behaviors_test.tsv",
                        "summaries.tsv", "topics.json"})
    o.path(f);
  o.write_json("config.json", echo);
  save_synth_dir(out, synth_generate(sc), sc);
  o.commit();
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  Outputs o;
  o.set_dir(cfg.out_dir);
  o.write_json("config.json", config_echo("train", cfg));
  Corpus corpus = load_corpus_dir(cfg.data_dir);
  if (cfg.train_fraction < 1.0) corpus = subsample_users(corpus, cfg.train_fraction, cfg.train.seed);
  std::ofstream log(o.path("train_log.jsonl"));
  TrainedRun run = train_run(cfg, corpus, &log);
  run.model.save(o.path("model.ckpt").string(), json(cfg.data));
  json summary = {{"best_epoch", run.result.best_epoch},
                  {"best_dev_auc", run.result.best_dev_auc >= 0 ? json(run.result.best_dev_auc) : json(nullptr)},
                  {"epochs", run.result.epochs.size()},
                  {"parameters", run.model.params().count()}};
  o.write_json("train_summary.json", summary);
  std::cout << summary.dump() << '\n';
  o.commit();
  return 0;
}

struct LoadedModel {
  EmbSumModel model;
  DataConfig data;
};

LoadedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return {EmbSumModel::from_checkpoint(ck), checkpoint_data_config(ck)};
}

Dataset load_dataset(const LoadedModel& lm, const std::string& data_dir) {
  return make_dataset(load_corpus_dir(data_dir), lm.data, lm.model.config(), lm.model.vocab());
}

// Scores file: impression_id <tab> item_id <tab> score.
std::vector<ImpressionResult> score_from_file(const std::string& path,
                                              const std::vector<Impression>& imps) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scores file " + path);
  std::map<std::pair<std::string, std::string>, double> scores;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 columns");
    scores[{f[0], f[1]}] = std::stod(f[2]);
  }
  std::vector<ImpressionResult> out;
  for (const auto& imp : imps) {
    ImpressionResult r;
    for (const auto& [id, label] : imp.candidates) {
      auto it = scores.find({imp.id, id});
      if (it == scores.end()) throw std::runtime_error("no score for impression " + imp.id + " item " + id);
      r.scores.push_back(it->second);
      r.labels.push_back(label);
    }
    out.push_back(std::move(r));
  }
  return out;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
                 const std::string& scores_file, const std::string& mode, const std::string& out) {
  Outputs o;
  o.set_dir(out);
  o.write_json("config.json", {{"command", "evaluate"}, {"checkpoint", checkpoint}, {"data_dir", data_dir},
                               {"split", split}, {"scores", scores_file}, {"mode", mode}});
  const Split s = parse_split(split);
  json metrics;
  if (!scores_file.empty()) {
    Corpus corpus = load_corpus_dir(data_dir);
    std::vector<Impression> imps;
    for (const auto& imp : corpus.impressions)
      if (imp.split == s) imps.push_back(imp);
    metrics = aggregate(score_from_file(scores_file, imps));
  } else {
    if (checkpoint.empty()) throw std::invalid_argument("evaluate needs --checkpoint or --scores");
    LoadedModel lm = load_model(checkpoint);
    Dataset ds = load_dataset(lm, data_dir);
    std::optional<GlobalMode> gm;
    if (!mode.empty()) gm = global_mode_from_name(mode);
    EvalResult ev = evaluate(lm.model, ds, ds.split(s), gm);
    metrics = ev.metrics;
    if (auto rep = summary_report(ds, ev.generated)) metrics["rouge"] = *rep;
  }
  o.write_json("metrics.json", metrics);
  std::cout << metrics.dump() << '\n';
  o.commit();
  return 0;
}

int cmd_precompute(const std::string& checkpoint, const std::string& data_dir, const std::string& out) {
  Outputs o;
  o.set_dir(out);
  o.write_json("config.json",
               {{"command", "precompute"}, {"checkpoint", checkpoint}, {"data_dir", data_dir}});
  LoadedModel lm = load_model(checkpoint);
  Dataset ds = load_dataset(lm, data_dir);
  EmbeddingFile cpe = precompute_cpe(lm.model, ds);
  cpe.save(o.path("cpe.embs").string());
  EmbeddingFile upe = precompute_upe(lm.model, ds);
  upe.save(o.path("upe.embs").string());
  std::cout << json{{"cpe", cpe.size()}, {"upe", upe.size()}}.dump() << '\n';
  o.commit();
  return 0;
}

int cmd_score(const std::string& checkpoint, const std::string& upe_path, const std::string& cpe_path,
              const std::string& user, std::vector<std::string> candidates, std::size_t top_k,
              const std::string& out) {
  std::vector<std::string> ids;
  for (const auto& c : candidates) {
    std::stringstream ss(c);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) ids.push_back(part);
  }
  const EmbeddingFile upe = EmbeddingFile::load(upe_path);
  const EmbeddingFile cpe = EmbeddingFile::load(cpe_path);
  if (ids.empty()) ids = cpe.ids();
  const Tensor w_s = load_head(load_checkpoint(checkpoint));
  json ranked = json::array();
  for (const auto& r : score_offline(upe, cpe, w_s, user, ids, top_k)) {
    ranked.push_back({{"id", r.id}, {"score", r.score}});
  }
  json result = {{"user", user}, {"ranked", ranked}};
  if (!out.empty()) {
    Outputs o;
    o.set_dir(out);
    o.write_json("config.json", {{"command", "score"}, {"checkpoint", checkpoint}, {"upe", upe_path},
                                 {"cpe", cpe_path}, {"user", user}, {"candidates", ids}, {"top_k", top_k}});
    o.write_json("scores.json", result);
    o.commit();
  }
  std::cout << std::setprecision(17) << result.dump() << '\n';
  return 0;
}

int cmd_summarize(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
                  const std::string& out) {
  Outputs o;
  o.set_dir(out);
  o.write_json("config.json", {{"command", "summarize"}, {"checkpoint", checkpoint}, {"data_dir", data_dir},
                               {"split", split}});
  LoadedModel lm = load_model(checkpoint);
  Dataset ds = load_dataset(lm, data_dir);
  std::set<std::string> users;
  if (split == "all") {
    for (const auto& [id, _] : ds.users) users.insert(id);
  } else {
    for (const auto& imp : ds.split(parse_split(split))) users.insert(imp.user_id);
  }
  NoGradGuard ng;
  std::map<std::string, std::vector<std::size_t>> generated;
  std::ofstream os(o.path("summaries_out.tsv"));
  for (const auto& id : users) {
    UserEncoding enc = lm.model.encode_user(ds.users.at(id), GlobalMode::kGenerate);
    os << id << '\t' << lm.model.vocab().detokenize(enc.generated) << '\n';
    generated[id] = std::move(enc.generated);
  }
  os.close();
  json report = {{"n_users", users.size()}};
  if (auto rep = summary_report(ds, generated)) report["rouge"] = *rep;
  o.write_json("summary_metrics.json", report);
  std::cout << report.dump() << '\n';
  o.commit();
  return 0;
}

int cmd_sweep(const RunConfig& base) {
  Outputs o;
  o.set_dir(base.out_dir);
  o.write_json("config.json", config_echo("sweep", base));
  Corpus corpus = load_corpus_dir(base.data_dir);
  if (base.train_fraction < 1.0) corpus = subsample_users(corpus, base.train_fraction, base.train.seed);
  std::ofstream log(o.path("sweep_log.jsonl"));
  std::vector<SweepRow> rows;
  for (const SweepPoint& p : sweep_grid()) {
    RunConfig cfg = base;
    cfg.train.lambda = p.lambda;
    cfg.model.n = p.n;
    cfg.model.m = p.m;
    const auto t0 = std::chrono::steady_clock::now();
    TrainedRun run = train_run(cfg, corpus);
    SweepRow row;
    row.point = p;
    row.best_epoch = run.result.best_epoch;
    if (run.dataset.dev.empty()) throw std::invalid_argument("sweep needs dev impressions");
    row.dev = evaluate(run.model, run.dataset, run.dataset.dev).metrics;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json j = {{"lambda", p.lambda}, {"n", p.n}, {"m", p.m}, {"dev", row.dev},
              {"best_epoch", row.best_epoch}, {"seconds", row.seconds}};
    log << j.dump() << '\n' << std::flush;
    std::cerr << j.dump() << '\n';
    rows.push_back(row);
  }
  std::ofstream tsv(o.path("sweep.tsv"));
  tsv << "lambda\tn\tm\tdev_auc\tdev_mrr\tdev_ndcg5\tdev_ndcg10\tbest_epoch\tseconds\n";
  tsv << std::setprecision(6);
  for (const auto& r : rows) {
    tsv << r.point.lambda << '\t' << r.point.n << '\t' << r.point.m << '\t' << r.dev.auc << '\t'
        << r.dev.mrr << '\t' << r.dev.ndcg5 << '\t' << r.dev.ndcg10 << '\t' << r.best_epoch << '\t'
        << r.seconds << '\n';
  }
  tsv.close();
  std::cout << json{{"rows", rows.size()}}.dump() << '\n';
  o.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EmbSum content-based recommender"};
  app.require_subcommand(1);

  SynthConfig sc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic topic corpus");
  synth->add_option("--users", sc.n_users);
  synth->add_option("--items", sc.n_items);
  synth->add_option("--topics", sc.n_topics);
  synth->add_option("--k", sc.k_history, "history length");
  synth->add_option("--impressions", sc.impressions_per_user, "impressions per user");
  synth->add_option("--neg-ratio", sc.neg_ratio, "negatives per impression");
  synth->add_option("--seed", sc.seed);
  synth->add_option("--out", synth_out)->required();

  Overrides train_ov, sweep_ov;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_ov.attach(train_cmd);
  auto* sweep = app.add_subcommand("sweep", "train the lambda × n × m grid and tabulate dev metrics");
  sweep_ov.attach(sweep);

  std::string ckpt, data_dir, split = "test", scores_file, mode, out;
  auto* eval_cmd = app.add_subcommand("evaluate", "ranking metrics (and ROUGE) on a split");
  eval_cmd->add_option("--checkpoint", ckpt);
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--scores", scores_file, "TSV impression_id, item_id, score (no model)");
  eval_cmd->add_option("--mode", mode, "global vector mode override")
      ->check(CLI::IsMember({"train_teacher_forced", "infer_generate", "ablation_sos_only"}));
  eval_cmd->add_option("--out", out)->required();

  auto* pre = app.add_subcommand("precompute", "write cpe.embs and upe.embs");
  pre->add_option("--checkpoint", ckpt)->required();
  pre->add_option("--data", data_dir)->required();
  pre->add_option("--out", out)->required();

  std::string upe_path, cpe_path, user;
  std::vector<std::string> candidates;
  std::size_t top_k = 0;
  auto* score = app.add_subcommand("score", "rank candidates from stored embeddings");
  score->add_option("--checkpoint", ckpt)->required();
  score->add_option("--upe", upe_path)->required();
  score->add_option("--cpe", cpe_path)->required();
  score->add_option("--user", user)->required();
  score->add_option("--candidates", candidates, "item ids (comma separated); default all");
  score->add_option("--top-k", top_k);
  score->add_option("--out", out);

  auto* summ = app.add_subcommand("summarize", "greedy interest summaries to summaries_out.tsv");
  summ->add_option("--checkpoint", ckpt)->required();
  summ->add_option("--data", data_dir)->required();
  summ->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test", "all"}));
  summ->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*synth) return cmd_synth(sc, synth_out);
    if (*train_cmd) return cmd_train(train_ov.resolve());
    if (*sweep) return cmd_sweep(sweep_ov.resolve());
    if (*eval_cmd) return cmd_evaluate(ckpt, data_dir, split, scores_file, mode, out);
    if (*pre) return cmd_precompute(ckpt, data_dir, out);
    if (*score) return cmd_score(ckpt, upe_path, cpe_path, user, candidates, top_k, out);
    if (*summ) return cmd_summarize(ckpt, data_dir, split, out);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"command", name}}.dump() << '\n';
    return 1;
  }
  return 1;
}
