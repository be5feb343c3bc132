#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kdret/corpus.hpp"
#include "kdret/distill.hpp"
#include "kdret/errors.hpp"
#include "kdret/experiment.hpp"
#include "kdret/index.hpp"
#include "kdret/io.hpp"
#include "kdret/metrics.hpp"
#include "kdret/models.hpp"
#include "kdret/synthetic.hpp"
#include "kdret/tfidf.hpp"

#ifndef KDRET_GIT_COMMIT
#define KDRET_GIT_COMMIT "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kdret;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string flag_of(const std::string& key) {
  std::string f = "--" + key;
  for (char& c : f)
    if (c == '_') c = '-';
  return f;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// Converts a flag string or config value to the type of `like`.
json coerce(const std::string& key, const json& value, const json& like) {
  try {
    if (value.is_string() && !like.is_string() && !like.is_null()) {
      const std::string s = value.get<std::string>();
      if (like.is_boolean()) {
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw UsageError("expected true or false");
      }
      if (like.is_number_unsigned() || like.is_number_integer()) {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size() || s.front() == '-') throw UsageError("expected a non-negative integer");
        return v;
      }
      if (like.is_number_float()) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw UsageError("expected a number");
        return v;
      }
      if (like.is_array()) {
        json arr = json::array();
        const json elem = like.empty() ? json("") : like.front();
        for (const auto& item : split_list(s)) arr.push_back(coerce(key, item, elem));
        return arr;
      }
    }
    if (like.is_null() || like.is_string()) {
      if (!value.is_string()) throw UsageError("expected a string");
      return value;
    }
    if (like.is_boolean() && !value.is_boolean()) throw UsageError("expected a boolean");
    if (like.is_number_float() && !value.is_number()) throw UsageError("expected a number");
    if ((like.is_number_unsigned() || like.is_number_integer()) && !value.is_number_unsigned())
      throw UsageError("expected a non-negative integer");
    if (like.is_array()) {
      if (!value.is_array()) throw UsageError("expected a list");
      json arr = json::array();
      const json elem = like.empty() ? json("") : like.front();
      for (const auto& item : value) arr.push_back(coerce(key, item, elem));
      return arr;
    }
    return value;
  } catch (const UsageError& e) {
    throw UsageError("option " + flag_of(key) + ": " + e.what());
  } catch (const std::logic_error&) {
    throw UsageError("option " + flag_of(key) + ": cannot parse '" + value.dump() + "'");
  }
}

struct Param {
  std::string key;
  json def;  // null: optional string
  std::string help;
};

// Artifacts written by a command: paths whose bytes must reproduce on replay,
// plus volatile ones (wall-clock timings) that are recorded but not checked.
struct Outputs {
  std::vector<fs::path> artifacts;
  std::vector<fs::path> volatile_files;
};

struct Context {
  json cfg;
  std::vector<fs::path> inputs;
  std::map<std::string, std::string> checkpoints;
  fs::path manifest_for;
  std::ostream& out;

  std::string str(const std::string& k) const { return cfg.at(k).is_null() ? "" : cfg.at(k).get<std::string>(); }
  double num(const std::string& k) const { return cfg.at(k).get<double>(); }
  std::uint64_t u64(const std::string& k) const { return cfg.at(k).get<std::uint64_t>(); }
  fs::path input(const std::string& k) {
    const std::string p = str(k);
    if (p.empty()) throw UsageError("missing required option " + flag_of(k));
    inputs.emplace_back(p);
    return p;
  }
  fs::path output(const std::string& k) const {
    const std::string p = str(k);
    if (p.empty()) throw UsageError("missing required option " + flag_of(k));
    return p;
  }
};

using Handler = std::function<Outputs(Context&)>;

struct Command {
  std::string name;
  std::string help;
  std::vector<Param> params;
  Handler run;
  std::string manifest_key = "out";
};

// ---------------------------------------------------------------------------
// dataset directory layout

struct Dataset {
  fs::path dir;
  Corpus corpus;
  ClaimSplit claims;
  std::vector<CandidateSet> train, dev, test;
  Vocabulary vocab;
  json meta;

  const std::vector<CandidateSet>& sets(const std::string& split) const {
    if (split == "train") return train;
    if (split == "dev") return dev;
    if (split == "test") return test;
    throw UsageError("unknown split '" + split + "' (expected train, dev or test)");
  }
  const std::vector<Claim>& split_claims(const std::string& split) const {
    if (split == "train") return claims.train;
    if (split == "dev") return claims.dev;
    if (split == "test") return claims.test;
    throw UsageError("unknown split '" + split + "' (expected train, dev or test)");
  }
  EncodedData encoded(const std::string& split, const Vocabulary& v) const {
    return encode_data(sets(split), split_claims(split), corpus, v);
  }
};

const char* kDatasetFiles[] = {"corpus.jsonl", "claims_train.jsonl", "claims_dev.jsonl", "claims_test.jsonl",
                               "train.jsonl",  "dev.jsonl",          "test.jsonl",       "vocab.json",
                               "dataset.json"};

Dataset load_dataset(Context& ctx, const std::string& key = "dataset") {
  Dataset d;
  d.dir = ctx.input(key);
  ctx.inputs.pop_back();
  for (const char* f : kDatasetFiles) ctx.inputs.push_back(d.dir / f);
  d.corpus = Corpus(read_corpus(d.dir / "corpus.jsonl"));
  d.claims.train = read_claims(d.dir / "claims_train.jsonl");
  d.claims.dev = read_claims(d.dir / "claims_dev.jsonl");
  d.claims.test = read_claims(d.dir / "claims_test.jsonl");
  d.train = read_dataset(d.dir / "train.jsonl");
  d.dev = read_dataset(d.dir / "dev.jsonl");
  d.test = read_dataset(d.dir / "test.jsonl");
  d.vocab = Vocabulary::from_tokens(json::parse(read_file(d.dir / "vocab.json")).get<std::vector<std::string>>());
  d.meta = json::parse(read_file(d.dir / "dataset.json"));
  return d;
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

EncoderConfig model_config(const Context& ctx, std::size_t vocab, bool teacher, std::uint64_t seed) {
  EncoderConfig c = teacher ? default_teacher_config(vocab, seed) : default_student_config(vocab, seed);
  if (ctx.u64("embed") != 0) c.embed_dim = ctx.u64("embed");
  if (ctx.u64("hidden") != 0) c.hidden_dim = ctx.u64("hidden");
  return c;
}

TrainConfig train_config(const Context& ctx) {
  TrainConfig t;
  t.lr = ctx.num("lr");
  t.epochs = ctx.u64("epochs");
  t.batch_size = ctx.u64("batch_size");
  t.seed = ctx.u64("seed");
  if (ctx.cfg.contains("data_fraction")) t.data_fraction = ctx.num("data_fraction");
  return t;
}

json history_json(const TrainResult& r) {
  json h = json::array();
  for (const auto& e : r.history) {
    json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    if (e.dev) row["dev"] = report_json(*e.dev);
    h.push_back(row);
  }
  return {{"best_epoch", r.best_epoch}, {"history", h}};
}

Checkpoint load_ckpt(Context& ctx, const std::string& key) {
  const fs::path p = ctx.input(key);
  Checkpoint c = load_checkpoint(p);
  ctx.checkpoints[key] = checkpoint_hash(c);
  return c;
}

TeacherLogitCache load_cache(Context& ctx, const std::string& key) {
  const fs::path p = ctx.input(key);
  return TeacherLogitCache::from_rows(read_claim_vectors(p, "logits"), file_hash(p));
}

std::vector<Param> train_params(bool teacher) {
  return {{"dataset", nullptr, "dataset directory from build-dataset"},
          {"out", nullptr, "checkpoint path"},
          {"epochs", 10u, "training epochs"},
          {"lr", 1e-3, "Adam learning rate"},
          {"batch_size", 8u, "claims per batch"},
          {"seed", 0u, "init and shuffle seed"},
          {"embed", 0u, "embedding size (0: default 64)"},
          {"hidden", 0u, teacher ? "hidden size (0: default 192)" : "hidden size (0: default 64)"}};
}

std::vector<Param> student_params() {
  auto p = train_params(false);
  p.push_back({"student", "lstm", "student encoder: cnn or lstm"});
  p.push_back({"alpha", 0.0, "soft loss weight"});
  p.push_back({"temperature", 1.0, "softening temperature (0 selects the teacher argmax)"});
  p.push_back({"soft_loss", "ce", "soft loss: ce or mse"});
  p.push_back({"cache", nullptr, "teacher logit cache (needed when alpha > 0)"});
  p.push_back({"data_fraction", 1.0, "share of training claims used"});
  return p;
}

LossConfig loss_config(const Context& ctx) {
  LossConfig l;
  l.alpha = ctx.num("alpha");
  l.temperature = ctx.num("temperature");
  l.soft_loss = parse_soft_loss(ctx.str("soft_loss"));
  l.validate();
  return l;
}

std::string table2_header() {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-5s %5s %4s %4s %8s %10s %10s %10s %10s %8s\n", "loss", "alpha", "T", "seed", "R(1)",
                "micro R(3)", "macro R(3)", "micro R(5)", "macro R(5)", "DCG");
  return buf;
}

std::string table2_row(const std::string& loss, double alpha, double T, std::uint64_t seed, const RankingReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-5s %5.2f %4g %4llu %8.2f %10.2f %10.2f %10.2f %10.2f %8.2f\n", loss.c_str(), alpha,
                T, static_cast<unsigned long long>(seed), r.r1, r.recall_micro3, r.recall_macro3, r.recall_micro5,
                r.recall_macro5, r.dcg);
  return buf;
}

// ---------------------------------------------------------------------------
// commands

Outputs cmd_make_toy(Context& ctx) {
  ToyConfig tc;
  tc.docs = ctx.u64("docs");
  tc.claims = ctx.u64("claims");
  tc.seed = ctx.u64("seed");
  const ToyData toy = make_toy(tc);
  const fs::path dir = ctx.output("out");
  fs::create_directories(dir);
  write_corpus(dir / "corpus.jsonl", toy.docs);
  write_claims(dir / "claims.jsonl", toy.claims);
  ctx.out << "wrote " << toy.docs.size() << " documents and " << toy.claims.size() << " claims to " << dir.string()
          << "\n";
  return {{dir / "corpus.jsonl", dir / "claims.jsonl"}, {}};
}

Outputs cmd_build_dataset(Context& ctx) {
  auto docs = read_corpus(ctx.input("corpus"));
  const auto claims = read_claims(ctx.input("claims"));
  const std::size_t C = ctx.u64("C");
  DatasetBundle b = build_bundle(docs, claims, C, ctx.u64("seed"), ctx.u64("mine_depth"));

  const fs::path dir = ctx.output("out");
  fs::create_directories(dir);
  write_corpus(dir / "corpus.jsonl", b.corpus.docs());
  write_claims(dir / "claims_train.jsonl", b.split.train);
  write_claims(dir / "claims_dev.jsonl", b.split.dev);
  write_claims(dir / "claims_test.jsonl", b.split.test);
  write_dataset(dir / "train.jsonl", b.train);
  write_dataset(dir / "dev.jsonl", b.dev);
  write_dataset(dir / "test.jsonl", b.test);
  write_json(dir / "vocab.json", b.vocab.tokens());

  std::vector<std::size_t> Cs;
  for (std::size_t c : {1u, 2u, 3u, 5u, 10u, 20u, 50u, 100u})
    if (c <= b.corpus.size()) Cs.push_back(c);
  if (std::find(Cs.begin(), Cs.end(), C) == Cs.end() && C <= b.corpus.size()) Cs.push_back(C);
  std::sort(Cs.begin(), Cs.end());
  json cov = json::array();
  ctx.out << "     C   retained %     mined %\n";
  for (const auto& row : coverage_stats(claims, b.corpus, b.index, Cs)) {
    cov.push_back({{"C", row.C}, {"retained_pct", row.retained_pct}, {"mined_pct", row.mined_pct}});
    char line[96];
    std::snprintf(line, sizeof line, "%6zu %12.2f %11.2f\n", row.C, row.retained_pct, row.mined_pct);
    ctx.out << line;
  }
  write_json(dir / "dataset.json", {{"C", C},
                                    {"seed", ctx.u64("seed")},
                                    {"mine_depth", ctx.u64("mine_depth")},
                                    {"documents", b.corpus.size()},
                                    {"claims", {{"train", b.train.size()}, {"dev", b.dev.size()}, {"test", b.test.size()}}},
                                    {"vocab_size", b.vocab.size()},
                                    {"coverage", cov}});
  std::vector<fs::path> arts;
  for (const char* f : kDatasetFiles) arts.push_back(dir / f);
  return {arts, {}};
}

Outputs cmd_train_teacher(Context& ctx) {
  const Dataset d = load_dataset(ctx);
  const EncodedData train = d.encoded("train", d.vocab), dev = d.encoded("dev", d.vocab);
  TeacherModel m(model_config(ctx, d.vocab.size(), true, ctx.u64("seed")));
  const TrainResult r = train_teacher(m, train, &dev, train_config(ctx), [&](const EpochStats& s) {
    ctx.out << "epoch " << s.epoch << "  loss " << s.train_loss << "  dev micro R(3) " << s.dev->recall_micro3 << "\n";
  });
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  save_checkpoint(out, make_checkpoint(m, d.vocab));
  write_json(fs::path(out.string() + ".history.json"), history_json(r));
  return {{out, fs::path(out.string() + ".history.json")}, {}};
}

Outputs cmd_score_teacher(Context& ctx) {
  const Dataset d = load_dataset(ctx);
  const Checkpoint ck = load_ckpt(ctx, "teacher");
  const TeacherModel m = teacher_from_checkpoint(ck);
  std::vector<ClaimVector> rows;
  const std::string split = ctx.str("split");
  for (const std::string s : {"train", "dev", "test"}) {
    if (split != "all" && split != s) continue;
    const EncodedData e = d.encoded(s, ck.vocab);
    const auto part = score_teacher(m, e).rows(e.sets);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (split != "all") d.sets(split);
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  write_claim_vectors(out, rows, "logits");
  ctx.out << "scored " << rows.size() << " claims with teacher " << ctx.checkpoints["teacher"] << "\n";
  return {{out}, {}};
}

Outputs cmd_train_student(Context& ctx) {
  const Dataset d = load_dataset(ctx);
  const LossConfig loss = loss_config(ctx);
  std::optional<TeacherLogitCache> cache;
  if (!ctx.str("cache").empty()) {
    cache = load_cache(ctx, "cache");
  }
  const EncodedData train = d.encoded("train", d.vocab), dev = d.encoded("dev", d.vocab);
  const StudentKind kind = parse_student_kind(ctx.str("student"));
  StudentModel m(kind, model_config(ctx, d.vocab.size(), false, ctx.u64("seed")));
  const TrainResult r =
      train_student(m, train, &dev, loss, train_config(ctx), cache ? &*cache : nullptr, [&](const EpochStats& s) {
        ctx.out << "epoch " << s.epoch << "  loss " << s.train_loss << "  dev micro R(3) " << s.dev->recall_micro3
                << "\n";
      });
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  save_checkpoint(out, make_checkpoint(m, d.vocab));
  write_json(fs::path(out.string() + ".history.json"), history_json(r));
  return {{out, fs::path(out.string() + ".history.json")}, {}};
}

Outputs cmd_evaluate(Context& ctx) {
  const Dataset d = load_dataset(ctx);
  const std::string split = ctx.str("split");
  std::vector<ClaimVector> scores;
  const int sources = !ctx.str("scores").empty() + !ctx.str("student").empty() + !ctx.str("teacher").empty();
  if (sources != 1) throw UsageError("give exactly one of --scores, --student, --teacher");
  if (!ctx.str("scores").empty()) {
    scores = read_claim_vectors(ctx.input("scores"), "scores");
  } else if (!ctx.str("student").empty()) {
    const Checkpoint ck = load_ckpt(ctx, "student");
    scores = score_student(student_from_checkpoint(ck), d.encoded(split, ck.vocab));
  } else {
    const Checkpoint ck = load_ckpt(ctx, "teacher");
    const EncodedData e = d.encoded(split, ck.vocab);
    scores = score_teacher(teacher_from_checkpoint(ck), e).rows(e.sets);
  }
  const RankingReport r = evaluate(d.sets(split), scores);
  ctx.out << report_table(r);
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  write_json(out, report_json(r));
  return {{out}, {}};
}

Outputs cmd_index(Context& ctx) {
  const Checkpoint ck = load_ckpt(ctx, "student");
  std::vector<Document> docs;
  if (!ctx.str("corpus").empty())
    docs = read_corpus(ctx.input("corpus"));
  else
    docs = load_dataset(ctx).corpus.docs();
  CostLedger ledger;
  const DocIndex index = build_index(ck, Corpus(std::move(docs)), &ledger);
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  save_index(out, index);
  ctx.out << "indexed " << index.size() << " documents (" << ledger.counts().doc_encoder
          << " document-encoder calls)\n";
  return {{out}, {}};
}

Outputs cmd_retrieve(Context& ctx) {
  const Checkpoint ck = load_ckpt(ctx, "student");
  const DocIndex index = load_index(ctx.input("index"));
  if (index.checkpoint_hash != ctx.checkpoints["student"])
    throw AlignmentError("index was built from checkpoint " + index.checkpoint_hash + ", not " +
                         ctx.checkpoints["student"]);
  const StudentModel m = student_from_checkpoint(ck);
  std::vector<Claim> claims;
  if (!ctx.str("claim").empty()) claims.push_back({"claim", ctx.str("claim"), {}});
  if (!ctx.str("claims").empty()) {
    const auto more = read_claims(ctx.input("claims"));
    claims.insert(claims.end(), more.begin(), more.end());
  }
  if (claims.empty()) throw UsageError("give --claim or --claims");
  CostLedger ledger;
  std::string lines;
  for (const auto& c : claims) {
    json hits = json::array();
    for (const auto& h : retrieve(m, ck.vocab, index, c.text, ctx.u64("k"), &ledger))
      hits.push_back({{"doc_id", h.doc_id}, {"score", h.score}});
    lines += json{{"claim_id", c.id}, {"hits", hits}}.dump() + "\n";
  }
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  write_file(out, lines);
  const CostCounts cc = ledger.counts();
  ctx.out << "retrieved for " << claims.size() << " claims: " << cc.claim_encoder << " claim-encoder calls, "
          << cc.join_head << " join-head evaluations, " << cc.doc_encoder << " document-encoder calls\n";
  return {{out}, {}};
}

Outputs cmd_benchmark(Context& ctx) {
  const Checkpoint sk = load_ckpt(ctx, "student");
  const Checkpoint tk = load_ckpt(ctx, "teacher");
  const Dataset d = load_dataset(ctx);
  std::vector<Claim> claims = d.claims.train;
  claims.insert(claims.end(), d.claims.dev.begin(), d.claims.dev.end());
  claims.insert(claims.end(), d.claims.test.begin(), d.claims.test.end());
  const std::size_t n = ctx.u64("n");
  if (n != 0) {
    if (n > claims.size()) throw ConfigError("--n exceeds the " + std::to_string(claims.size()) + " available claims");
    claims.resize(n);
  }
  const BenchmarkReport r = benchmark(student_from_checkpoint(sk), sk.vocab, teacher_from_checkpoint(tk), tk.vocab,
                                      d.corpus, claims);
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  write_json(out, {{"N", r.N},
                   {"D", r.D},
                   {"student", cost_json(r.student)},
                   {"teacher", cost_json(r.teacher)},
                   {"student_params", student_from_checkpoint(sk).count_params()},
                   {"teacher_params", teacher_from_checkpoint(tk).count_params()}});
  const fs::path timing(out.string() + ".timing.json");
  write_json(timing, {{"student_seconds", r.student_seconds},
                      {"teacher_seconds", r.teacher_seconds},
                      {"speedup", r.speedup}});
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "N=%zu D=%zu\nstudent: %llu encoder calls (N+D), %.3f s\nteacher: %llu joint calls (N*D), %.3f s\n"
                "speedup %.1fx\n",
                r.N, r.D, static_cast<unsigned long long>(r.student.encoder_calls()), r.student_seconds,
                static_cast<unsigned long long>(r.teacher.teacher_joint), r.teacher_seconds, r.speedup);
  ctx.out << buf;
  return {{out}, {timing}};
}

Outputs cmd_sweep(Context& ctx) {
  const Dataset d = load_dataset(ctx);
  const EncodedData train = d.encoded("train", d.vocab), dev = d.encoded("dev", d.vocab);
  std::vector<std::tuple<SoftLossType, double, double>> grid;
  if (!ctx.cfg.at("grid").empty()) {
    for (const auto& g : ctx.cfg.at("grid")) {
      std::stringstream ss(g.get<std::string>());
      std::string loss, a, t;
      if (!std::getline(ss, loss, ':') || !std::getline(ss, a, ':') || !std::getline(ss, t))
        throw UsageError("grid entries look like loss:alpha:T, got '" + g.get<std::string>() + "'");
      grid.emplace_back(parse_soft_loss(loss), std::stod(a), std::stod(t));
    }
  } else {
    for (const auto& l : ctx.cfg.at("soft_losses"))
      for (const auto& a : ctx.cfg.at("alphas"))
        for (const auto& t : ctx.cfg.at("temperatures"))
          grid.emplace_back(parse_soft_loss(l.get<std::string>()), a.get<double>(), t.get<double>());
  }
  const bool needs_cache = std::any_of(grid.begin(), grid.end(), [](auto& g) { return std::get<1>(g) > 0.0; });
  std::optional<TeacherLogitCache> cache;
  if (!ctx.str("cache").empty())
    cache = load_cache(ctx, "cache");
  else if (needs_cache)
    throw UsageError("--cache is required when the grid has alpha > 0");
  if (ctx.cfg.at("baseline").get<bool>()) grid.insert(grid.begin(), {SoftLossType::CE, 0.0, 1.0});

  const StudentKind kind = parse_student_kind(ctx.str("student"));
  json rows = json::array();
  std::string table = table2_header();
  ctx.out << table;
  for (const auto& s : ctx.cfg.at("seeds")) {
    const std::uint64_t seed = s.get<std::uint64_t>();
    for (const auto& [type, alpha, T] : grid) {
      const LossConfig loss{.alpha = alpha, .temperature = T, .soft_loss = type};
      TrainConfig tc = train_config(ctx);
      tc.seed = seed;
      StudentModel m(kind, model_config(ctx, d.vocab.size(), false, seed));
      const TrainResult r = train_student(m, train, &dev, loss, tc, cache ? &*cache : nullptr);
      const RankingReport& rep = *r.history[r.best_epoch - 1].dev;
      const std::string name = alpha == 0.0 ? "none" : soft_loss_name(type);
      rows.push_back({{"soft_loss", name}, {"alpha", alpha}, {"temperature", T}, {"seed", seed},
                      {"best_epoch", r.best_epoch}, {"dev", report_json(rep)}});
      const std::string line = table2_row(name, alpha, T, seed, rep);
      table += line;
      ctx.out << line << std::flush;
    }
  }
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  write_json(out, {{"student", student_kind_name(kind)}, {"rows", rows}});
  write_file(fs::path(out.string() + ".table.txt"), table);
  return {{out, fs::path(out.string() + ".table.txt")}, {}};
}

Outputs cmd_toy_experiment(Context& ctx) {
  ToyExperimentConfig cfg;
  cfg.toy.seed = ctx.u64("seed");
  cfg.toy.docs = ctx.u64("docs");
  cfg.toy.claims = ctx.u64("claims");
  cfg.teacher_train.epochs = ctx.u64("teacher_epochs");
  cfg.student_train.epochs = ctx.u64("student_epochs");
  cfg.seeds = ctx.cfg.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.alphas = ctx.cfg.at("alphas").get<std::vector<double>>();
  cfg.temperatures = ctx.cfg.at("temperatures").get<std::vector<double>>();
  cfg.soft_losses.clear();
  for (const auto& l : ctx.cfg.at("soft_losses")) cfg.soft_losses.push_back(parse_soft_loss(l.get<std::string>()));
  const ToyExperimentResult r = run_toy_experiment(cfg, [&](const std::string& s) { ctx.out << s << "\n" << std::flush; });
  json j = toy_result_json(r);
  const double seconds = j["seconds"];
  j.erase("seconds");
  const fs::path out = ctx.output("out");
  ensure_parent(out);
  write_json(out, j);
  const fs::path timing(out.string() + ".timing.json");
  write_json(timing, {{"seconds", seconds}});
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "teacher dev micro R(3) %.2f, alpha=0 student mean %.2f (gap %.2f); distilled student wins %zu of %zu "
                "seeds; %.0f s\n",
                r.teacher_dev.recall_micro3, r.baseline_mean3, r.teacher_gap, r.wins, r.seeds.size(), seconds);
  ctx.out << buf;
  return {{out}, {timing}};
}

std::vector<Command> commands() {
  return {
      {"make-toy",
       "write the synthetic corpus and claims",
       {{"out", nullptr, "output directory"}, {"docs", 200u, "documents"}, {"claims", 500u, "claims"},
        {"seed", 0u, "generator seed"}},
       cmd_make_toy},
      {"build-dataset",
       "split claims, mine TF-IDF candidates and report coverage",
       {{"corpus", nullptr, "corpus JSON-lines"}, {"claims", nullptr, "claims JSON-lines"},
        {"out", nullptr, "output directory"}, {"C", 10u, "candidates per claim"}, {"seed", 0u, "split seed"},
        {"mine_depth", 0u, "mined list depth (0: C)"}},
       cmd_build_dataset},
      {"train-teacher", "train the coattention teacher on hard labels", train_params(true), cmd_train_teacher},
      {"score-teacher",
       "write teacher logits for every claim of a split",
       {{"dataset", nullptr, "dataset directory"}, {"teacher", nullptr, "teacher checkpoint"},
        {"split", "train", "train, dev, test or all"}, {"out", nullptr, "cache path"}},
       cmd_score_teacher},
      {"train-student", "train a student with the combined loss", student_params(), cmd_train_student},
      {"evaluate",
       "ranking report for scores or a model on a split",
       {{"dataset", nullptr, "dataset directory"}, {"split", "dev", "train, dev or test"},
        {"scores", nullptr, "score file"}, {"student", nullptr, "student checkpoint"},
        {"teacher", nullptr, "teacher checkpoint"}, {"out", nullptr, "report path"}},
       cmd_evaluate},
      {"index",
       "precompute student document encodings",
       {{"student", nullptr, "student checkpoint"}, {"corpus", nullptr, "corpus JSON-lines"},
        {"dataset", nullptr, "dataset directory (used when --corpus is absent)"}, {"out", nullptr, "index path"}},
       cmd_index},
      {"retrieve",
       "top-k documents for claims from an index",
       {{"student", nullptr, "student checkpoint"}, {"index", nullptr, "index file"}, {"claim", nullptr, "claim text"},
        {"claims", nullptr, "claims JSON-lines"}, {"k", 5u, "results per claim"}, {"out", nullptr, "hits path"}},
       cmd_retrieve},
      {"benchmark",
       "all-pairs evaluation cost, student index against teacher",
       {{"dataset", nullptr, "dataset directory"}, {"student", nullptr, "student checkpoint"},
        {"teacher", nullptr, "teacher checkpoint"}, {"n", 0u, "claims to use (0: all)"},
        {"out", nullptr, "ledger path"}},
       cmd_benchmark},
      {"sweep",
       "grid over soft loss, alpha and temperature",
       [] {
         auto p = train_params(false);
         p.push_back({"student", "lstm", "student encoder: cnn or lstm"});
         p.push_back({"cache", nullptr, "teacher logit cache"});
         p.push_back({"alphas", json::array({0.2, 0.5, 1.0}), "alpha values"});
         p.push_back({"temperatures", json::array({1.0, 3.0, 6.0}), "temperatures"});
         p.push_back({"soft_losses", json::array({"ce", "mse"}), "soft losses"});
         p.push_back({"grid", json::array(), "explicit loss:alpha:T points (overrides the product grid)"});
         p.push_back({"seeds", json::array({0u}), "seeds"});
         p.push_back({"baseline", true, "include the alpha = 0 run"});
         p.push_back({"data_fraction", 1.0, "share of training claims used"});
         return p;
       }(),
       cmd_sweep},
      {"toy-experiment",
       "teacher, alpha = 0 baselines and the distillation sweep on the synthetic corpus",
       [] {
         const ToyExperimentConfig d;
         return std::vector<Param>{{"out", nullptr, "result path"},
                                   {"seed", 0u, "corpus seed"},
                                   {"docs", d.toy.docs, "documents"},
                                   {"claims", d.toy.claims, "claims"},
                                   {"teacher_epochs", d.teacher_train.epochs, "teacher epochs"},
                                   {"student_epochs", d.student_train.epochs, "student epochs"},
                                   {"seeds", d.seeds, "student seeds"},
                                   {"alphas", d.alphas, "alpha values"},
                                   {"temperatures", d.temperatures, "temperatures"},
                                   {"soft_losses", json::array({"ce", "mse"}), "soft losses"}};
       }(),
       cmd_toy_experiment},
  };
}

fs::path manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

json hashes(const std::vector<fs::path>& paths) {
  json j = json::object();
  for (const auto& p : paths) j[p.string()] = fs::exists(p) ? file_hash(p) : "missing";
  return j;
}

int run(const std::vector<std::string>& argv, std::ostream& out);

int replay(const fs::path& manifest, std::ostream& out) {
  const json m = json::parse(read_file(manifest));
  const auto args = m.at("argv").get<std::vector<std::string>>();
  const fs::path cwd = fs::current_path();
  fs::current_path(m.at("cwd").get<std::string>());
  int rc = 1;
  try {
    rc = run(args, out);
  } catch (...) {
    fs::current_path(cwd);
    throw;
  }
  if (rc == 0) {
    for (const auto& [path, hash] : m.at("artifacts").items()) {
      const std::string now = fs::exists(path) ? file_hash(path) : "missing";
      if (now != hash.get<std::string>()) {
        std::cerr << "replay mismatch: " << path << " was " << hash.get<std::string>() << ", now " << now << "\n";
        rc = 1;
      }
    }
    if (rc == 0) out << "replay reproduced " << m.at("artifacts").size() << " artifacts byte-identically\n";
  }
  fs::current_path(cwd);
  return rc;
}

int run(const std::vector<std::string>& argv, std::ostream& out) {
  CLI::App app{"kdret: knowledge-distilled document retrieval"};
  app.require_subcommand(1);
  const auto cmds = commands();
  std::vector<std::map<std::string, std::string>> raw(cmds.size());
  std::vector<std::map<std::string, CLI::Option*>> opts(cmds.size());
  std::vector<std::string> config_paths(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    CLI::App* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    sub->add_option("--config", config_paths[i], "JSON file with option values (flags take precedence)");
    for (const auto& p : cmds[i].params) {
      std::string help = p.help;
      if (!p.def.is_null()) help += " [" + (p.def.is_string() ? p.def.get<std::string>() : p.def.dump()) + "]";
      opts[i][p.key] = sub->add_option(flag_of(p.key), raw[i][p.key], help);
    }
    subs.push_back(sub);
  }
  std::string manifest;
  CLI::App* rep = app.add_subcommand("replay", "re-run a command from its manifest and verify the artifacts");
  rep->add_option("manifest", manifest, "manifest path")->required();

  std::vector<std::string> rev(argv.rbegin(), argv.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(e.get_name().empty() ? "" : e.get_name());
    for (auto* s : subs)
      if (s->parsed()) out << s->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  if (rep->parsed()) return replay(manifest, out);

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const Command& c = cmds[i];
    json cfg = json::object();
    for (const auto& p : c.params) cfg[p.key] = p.def;
    Context ctx{cfg, {}, {}, {}, out};
    if (!config_paths[i].empty()) {
      ctx.inputs.emplace_back(config_paths[i]);
      json file;
      try {
        file = json::parse(read_file(config_paths[i]));
      } catch (const json::exception& e) {
        throw UsageError("config file '" + config_paths[i] + "' is not valid JSON: " + e.what());
      }
      if (!file.is_object()) throw UsageError("config file must hold a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (!cfg.contains(k)) throw UsageError("config key '" + k + "' is not an option of " + c.name);
        cfg[k] = coerce(k, v, cfg[k]);
      }
    }
    for (const auto& p : c.params)
      if (opts[i][p.key]->count() > 0) cfg[p.key] = coerce(p.key, raw[i][p.key], p.def);
    ctx.cfg = cfg;

    const std::string started = utc_now();
    const Outputs o = c.run(ctx);
    const fs::path mpath = manifest_path(ctx.output(c.manifest_key));
    json m = {{"command", c.name},
              {"argv", argv},
              {"cwd", fs::current_path().string()},
              {"config", cfg},
              {"seed", cfg.contains("seed") ? cfg["seed"] : json()},
              {"inputs", hashes(ctx.inputs)},
              {"artifacts", hashes(o.artifacts)},
              {"volatile", hashes(o.volatile_files)},
              {"checkpoints", ctx.checkpoints},
              {"git_commit", KDRET_GIT_COMMIT},
              {"started_at", started},
              {"finished_at", utc_now()}};
    write_json(mpath, m);
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args, std::cout);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const kdret::Error& e) {
    std::cerr << "error [" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error [FormatError]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
