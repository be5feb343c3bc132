// One PASS/FAIL line per acceptance criterion. Optional arguments select
// criteria by number; the exit status is nonzero if any selected one fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdret/distill.hpp"
#include "kdret/experiment.hpp"
#include "kdret/index.hpp"
#include "kdret/io.hpp"
#include "kdret/metrics.hpp"
#include "kdret/models.hpp"
#include "kdret/rng.hpp"
#include "kdret/synthetic.hpp"
#include "kdret/tfidf.hpp"
#include "oracles.hpp"

using namespace kdret;
using namespace kdret::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using clock_type = std::chrono::steady_clock;

double since(clock_type::time_point t0) { return std::chrono::duration<double>(clock_type::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... xs) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

EncoderConfig tiny(std::uint64_t seed, std::size_t vocab) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 3;
  c.hidden_dim = 3;
  c.kernel_widths = {1, 2};
  c.filters = 2;
  c.max_claim_len = 8;
  c.max_doc_len = 8;
  c.seed = seed;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(rng.below(vocab)));
  return ids;
}

std::vector<double> random_logits(Rng& rng, std::size_t n, double scale = 4.0) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(rng.uniform(-scale, scale));
  return v;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = clock_type::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto note = [&](double err, const std::string& name) {
    ++checks;
    if (!(err <= worst)) {
      worst = err;
      worst_name = name;
    }
  };
  for (const auto& c : op_cases())
    for (std::uint64_t seed = 0; seed < 10; ++seed) note(op_grad_error(c, seed), c.name);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto claim = random_ids(rng, 3, 12), doc = random_ids(rng, 5, 12);
    for (StudentKind kind : {StudentKind::CNN, StudentKind::LSTM}) {
      StudentModel m(kind, tiny(seed, 12));
      note(grad_check_params([&](Tape& t) { return m.score(t, m.encode_claim(t, claim), m.encode_document(t, doc)); },
                             m.params().pointers()),
           kind == StudentKind::CNN ? "student_cnn" : "student_lstm");
    }
    TeacherModel t(tiny(seed, 12));
    note(grad_check_params([&](Tape& tp) { return t.score(tp, claim, doc); }, t.params().pointers()), "teacher");
  }
  const double secs = since(t0);
  return {worst < 1e-4 && secs < 300.0, fmt("%zu checks, worst %.2e (%s), %.1f s", checks, worst, worst_name.c_str(), secs)};
}

Outcome softmax() {
  bool ok = true;
  double worst_norm = 0.0;
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto z = random_logits(rng, 2 + rng.below(15), 10.0);
    const std::size_t arg = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    double prev_max = 2.0;
    for (double T : {0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
      const auto p = temperature_softmax(z, T);
      double s = 0.0;
      for (double x : p) s += x;
      worst_norm = std::max(worst_norm, std::abs(s - 1.0));
      const std::size_t parg = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      ok = ok && parg == arg && p[arg] <= prev_max + 1e-15;
      prev_max = p[arg];
    }
    const auto hard = temperature_softmax(z, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) ok = ok && hard[i] == (i == arg ? 1.0 : 0.0);
  }
  ok = ok && worst_norm <= 1e-12;
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  const auto p1 = temperature_softmax(std::vector<double>{3.0, 1.0}, 1.0);
  const auto p2 = temperature_softmax(std::vector<double>{3.0, 1.0}, 2.0);
  const bool closed = std::abs(p1[0] - e2 / (e2 + 1.0)) <= 1e-15 && std::abs(p2[0] - e1 / (e1 + 1.0)) <= 1e-15;
  return {ok && closed, fmt("1000 vectors x 7 temperatures, worst |sum - 1| %.1e, [3,1]: %.4f at T=1, %.4f at T=2",
                            worst_norm, p1[0], p2[0])};
}

bool same_params(const ParamSet& a, const ParamSet& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].value == b[i].value)) return false;
  return true;
}

Outcome loss_boundaries() {
  bool exact_zero = true, perm = true;
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng.below(10);
    const auto t = random_logits(rng, C), s = random_logits(rng, C);
    std::vector<int> y(C, 0);
    y[rng.below(C)] = 1;
    if (rng.below(3) == 0) y[rng.below(C)] = 1;
    const double T = rng.uniform(0.5, 8.0);
    const SoftLossType type = rng.below(2) ? SoftLossType::CE : SoftLossType::MSE;
    exact_zero = exact_zero && combined_loss({0.0, T, type}, y, &t, s) == hard_loss(y, s) &&
                 combined_loss({0.0, T, type}, y, nullptr, s) == hard_loss(y, s);
    const double base = combined_loss({1.0, T, type}, y, &t, s);
    for (int k = 0; k < 5; ++k) {
      rng.shuffle(y);
      perm = perm && combined_loss({1.0, T, type}, y, &t, s) == base;
    }
  }

  // alpha = 0 training against a no-teacher run on a small synthetic dataset
  ToyConfig tc;
  tc.docs = 30;
  tc.claims = 60;
  tc.entity_words = 40;
  tc.filler_words = 40;
  tc.doc_entities = 4;
  tc.doc_fillers = 8;
  tc.span_min = 3;
  tc.span_max = 4;
  tc.seed = 5;
  const ToyData toy = make_toy(tc);
  const DatasetBundle b = build_bundle(toy.docs, toy.claims, 5, 0);
  const EncodedData train = encode_data(b.train, b.split.train, b.corpus, b.vocab);
  const EncodedData dev = encode_data(b.dev, b.split.dev, b.corpus, b.vocab);
  const TeacherModel teacher(tiny(3, b.vocab.size()));
  const TeacherLogitCache cache = score_teacher(teacher, train);
  bool training = true;
  for (StudentKind kind : {StudentKind::CNN, StudentKind::LSTM}) {
    const TrainConfig cfg{.lr = 1e-2, .epochs = 3, .batch_size = 4, .seed = 2};
    StudentModel a(kind, tiny(9, b.vocab.size())), c(kind, tiny(9, b.vocab.size()));
    const auto ra = train_student(a, train, &dev, {.alpha = 0.0, .temperature = 3.0}, cfg, &cache);
    const auto rc = train_student(c, train, &dev, {.alpha = 0.0}, cfg, nullptr);
    training = training && same_params(a.params(), c.params()) && ra.history.size() == rc.history.size();
    for (std::size_t e = 0; training && e < ra.history.size(); ++e)
      training = ra.history[e].train_loss == rc.history[e].train_loss;
  }
  return {exact_zero && perm && training,
          fmt("alpha=0 equals hard loss: %s; alpha=0 training bit-identical without teacher: %s; "
              "alpha=1 label-permutation invariant: %s",
              exact_zero ? "yes" : "no", training ? "yes" : "no", perm ? "yes" : "no")};
}

Outcome metrics() {
  Rng rng(2025);
  std::vector<Instance> xs;
  for (std::size_t i = 0; i < 1000; ++i) xs.push_back(random_instance(rng, i));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::vector<RankedClaim> one{rank_claim(xs[i].set, xs[i].scores)};
    const MetricOracle o(std::vector<Instance>{xs[i]});
    for (std::size_t k = 1; k <= 10; ++k)
      mismatches += recall_micro(one, k) != o.micro(k) || recall_macro(one, k) != o.macro(k);
    mismatches += std::abs(dcg(one) - o.dcg()) > 1e-9;
  }
  const auto ranked = rank_all(xs);
  const MetricOracle all(xs);
  for (std::size_t k = 1; k <= 10; ++k)
    mismatches += recall_micro(ranked, k) != all.micro(k) || recall_macro(ranked, k) != all.macro(k);
  mismatches += std::abs(dcg(ranked) - all.dcg()) > 1e-9;

  bool monotone = true;
  for (std::size_t k = 1; k < 10; ++k)
    monotone = monotone && recall_micro(ranked, k) <= recall_micro(ranked, k + 1) &&
               recall_macro(ranked, k) <= recall_macro(ranked, k + 1);
  // k = C: every candidate list at full length
  Rng r2(77);
  std::vector<Instance> fixed;
  for (std::size_t i = 0; i < 200; ++i) fixed.push_back(random_instance(r2, i, 7));
  const auto rf = rank_all(fixed);
  const bool full = recall_micro(rf, 7) == 100.0 && recall_macro(rf, 7) == 100.0 && recall_micro(ranked, 10) == 100.0;
  return {mismatches == 0 && monotone && full,
          fmt("1000 instances, %zu oracle mismatches; monotone in k: %s; 100 at k=C: %s", mismatches,
              monotone ? "yes" : "no", full ? "yes" : "no")};
}

Outcome dataset() {
  std::size_t mismatches = 0, queries = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 20 + rng.below(20);
    const auto docs = random_corpus(rng, n, 15);
    const Corpus corpus(docs);
    const TfidfIndex idx = TfidfIndex::build(corpus);
    const DenseOracle oracle(docs);
    for (int q = 0; q < 5; ++q, ++queries) {
      const std::string text = random_text(rng, 18, 1 + rng.below(6));
      const std::size_t k = 1 + rng.below(n);
      const auto got = mine_candidates(idx, tokenize(text), k);
      const auto want = oracle.rank(text);
      bool same = got.size() == k;
      for (std::size_t i = 0; same && i < k; ++i)
        same = idx.doc_id(got[i].doc) == want[i].first && std::abs(got[i].score - want[i].second) <= 1e-12;
      mismatches += !same;
    }
  }

  bool coverage = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ToyConfig tc;
    tc.docs = 60;
    tc.claims = 100;
    tc.seed = seed;
    const ToyData toy = make_toy(tc);
    const Corpus corpus(toy.docs);
    const TfidfIndex idx = TfidfIndex::build(corpus);
    const std::vector<std::size_t> Cs{1, 2, 3, 5, 10, 20, 40, 60};
    const auto rows = coverage_stats(toy.claims, corpus, idx, Cs);
    for (std::size_t k = 1; k < rows.size(); ++k)
      coverage = coverage && rows[k].retained_pct >= rows[k - 1].retained_pct &&
                 rows[k].mined_pct >= rows[k - 1].mined_pct;
    coverage = coverage && rows.back().retained_pct == 100.0 && rows.back().mined_pct == 100.0;
  }
  return {mismatches == 0 && coverage,
          fmt("%zu queries over 100 corpora, %zu mismatches against exhaustive cosine; coverage nondecreasing and "
              "100%% at C=D: %s",
              queries, mismatches, coverage ? "yes" : "no")};
}

Outcome toy_experiment() {
  const ToyExperimentResult r = run_toy_experiment(ToyExperimentConfig{}, [](const std::string& s) {
    std::cerr << s << "\n";
  });
  std::ostringstream seeds;
  for (const auto& s : r.seeds)
    seeds << " " << s.seed << ":" << fmt("%.2f->%.2f", s.baseline.recall_micro3, s.sweep[s.best].dev.recall_micro3);
  const bool a = r.teacher_gap >= 5.0, b = r.wins >= 3, fast = r.seconds < 1800.0;
  return {a && b && fast,
          fmt("(a) teacher %.2f vs alpha=0 mean %.2f, gap %.2f %s; (b) distilled wins %zu of %zu %s; %.0f s;",
              r.teacher_dev.recall_micro3, r.baseline_mean3, r.teacher_gap, a ? "ok" : "FAIL", r.wins, r.seeds.size(),
              b ? "ok" : "FAIL", r.seconds) +
              seeds.str()};
}

struct DefaultWorld {
  DatasetBundle bundle;
  std::vector<Claim> claims;
};

DefaultWorld default_world() {
  const ToyData toy = make_toy(ToyConfig{});
  DefaultWorld w{build_bundle(toy.docs, toy.claims, 10, 0), toy.claims};
  return w;
}

Outcome cost(const DefaultWorld& w) {
  const std::size_t N = 200;
  const std::vector<Claim> claims(w.claims.begin(), w.claims.begin() + N);
  const std::size_t V = w.bundle.vocab.size();
  const StudentModel student(StudentKind::LSTM, default_student_config(V, 1));
  const TeacherModel teacher(default_teacher_config(V, 1));
  const BenchmarkReport r = benchmark(student, w.bundle.vocab, teacher, w.bundle.vocab, w.bundle.corpus, claims);
  const std::size_t D = r.D;
  const bool ledgers = r.student == CostCounts{D, N, N * D, 0} && r.student.encoder_calls() == N + D &&
                       r.teacher == CostCounts{0, 0, 0, N * D};
  return {ledgers && D >= 200 && r.speedup >= 3.0,
          fmt("D=%zu N=%zu; student encoder calls %llu (N+D), teacher joint calls %llu (N*D); student %.2f s, "
              "teacher %.1f s, speedup %.0fx",
              D, N, static_cast<unsigned long long>(r.student.encoder_calls()),
              static_cast<unsigned long long>(r.teacher.teacher_joint), r.student_seconds, r.teacher_seconds,
              r.speedup)};
}

Outcome params(const DefaultWorld& w) {
  const std::size_t V = w.bundle.vocab.size();
  const double t = static_cast<double>(TeacherModel(default_teacher_config(V)).count_params());
  const double cnn = static_cast<double>(StudentModel(StudentKind::CNN, default_student_config(V)).count_params());
  const double lstm = static_cast<double>(StudentModel(StudentKind::LSTM, default_student_config(V)).count_params());
  const double worst = std::min(t / cnn, t / lstm);
  return {worst >= 10.0, fmt("V=%zu teacher %.0f, CNN %.0f (%.1fx), LSTM %.0f (%.1fx)", V, t, cnn, t / cnn, lstm,
                             t / lstm)};
}

// ---------------------------------------------------------------------------

std::string quote(const std::string& s) { return "'" + s + "'"; }

int sh(const fs::path& dir, const std::string& args, const fs::path& log) {
  const std::string cmd = "cd " + quote(dir.string()) + " && " + quote(KDRET_CLI_PATH) + " " + args + " >> " +
                          quote(log.string()) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : 1;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("kdret_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"toy", "make-toy --out toy --docs 40 --claims 80 --seed 3"},
      {"ds", "build-dataset --corpus toy/corpus.jsonl --claims toy/claims.jsonl --out ds --C 5"},
      {"t.ckpt", "train-teacher --dataset ds --out t.ckpt --epochs 1 --embed 8 --hidden 8"},
      {"cache.jsonl", "score-teacher --dataset ds --teacher t.ckpt --split train --out cache.jsonl"},
      {"s.ckpt",
       "train-student --dataset ds --out s.ckpt --epochs 2 --embed 8 --hidden 6 --alpha 0.5 --temperature 2 "
       "--cache cache.jsonl"},
      {"eval.json", "evaluate --dataset ds --student s.ckpt --out eval.json"},
      {"idx.bin", "index --student s.ckpt --dataset ds --out idx.bin"},
      {"hits.jsonl", "retrieve --student s.ckpt --index idx.bin --claims ds/claims_dev.jsonl --k 3 --out hits.jsonl"},
      {"bench.json", "benchmark --dataset ds --student s.ckpt --teacher t.ckpt --n 5 --out bench.json"},
      {"sweep.json",
       "sweep --dataset ds --cache cache.jsonl --out sweep.json --epochs 1 --embed 8 --hidden 6 "
       "--grid ce:0.5:2,mse:1:1"},
      {"toyexp.json",
       "toy-experiment --out toyexp.json --docs 40 --claims 80 --teacher-epochs 1 --student-epochs 1 --seeds 0 "
       "--alphas 0.5 --temperatures 2 --soft-losses ce"},
  };
  std::size_t replayed = 0, artifacts = 0;
  std::vector<std::string> failed;
  for (const auto& [out, args] : steps)
    if (sh(dir, args, log) != 0) failed.push_back(args.substr(0, args.find(' ')));
  if (failed.empty()) {
    for (const auto& [out, args] : steps) {
      const std::string name = args.substr(0, args.find(' '));
      const fs::path manifest = dir / (out + ".manifest.json");
      json m;
      try {
        m = json::parse(read_file(manifest));
      } catch (const std::exception&) {
        failed.push_back(name + " (manifest)");
        continue;
      }
      std::vector<std::pair<fs::path, std::string>> before;
      for (const auto& [p, h] : m.at("artifacts").items()) before.emplace_back(dir / p, read_file(dir / p));
      if (before.empty()) failed.push_back(name + " (no artifacts)");
      for (const auto& [p, bytes] : before) fs::remove(p);
      bool same = sh(dir, "replay " + quote(manifest.string()), log) == 0;
      for (const auto& [p, bytes] : before) same = same && fs::exists(p) && read_file(p) == bytes;
      artifacts += before.size();
      if (same)
        ++replayed;
      else
        failed.push_back(name);
    }
  }
  std::string detail = fmt("%zu of %zu commands replayed, %zu artifacts byte-identical", replayed, steps.size(),
                           artifacts);
  if (!failed.empty()) {
    detail += "; failed:";
    for (const auto& f : failed) detail += " " + f;
    detail += " (log " + log.string() + ")";
  } else {
    fs::remove_all(dir);
  }
  return {failed.empty() && replayed == steps.size(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return only.empty() || only.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& f) {
    if (!want(n)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient suite", gradients);
  report(2, "temperature softmax", softmax);
  report(3, "combined loss boundaries", loss_boundaries);
  report(4, "ranking metrics oracle", metrics);
  report(5, "candidate mining oracle", dataset);
  report(9, "CLI replay determinism", determinism);
  if (want(7) || want(8)) {
    const DefaultWorld w = default_world();
    report(8, "parameter ratio", [&] { return params(w); });
    report(7, "evaluation cost asymmetry", [&] { return cost(w); });
  }
  report(6, "toy distillation experiment", toy_experiment);
  return failures == 0 ? 0 : 1;
}
