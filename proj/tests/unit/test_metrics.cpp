#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "kdret/errors.hpp"
#include "kdret/metrics.hpp"
#include "kdret/rng.hpp"
#include "oracles.hpp"

using namespace kdret;
using namespace kdret::testing;

namespace {

CandidateSet make_set(std::string id, std::vector<int> labels) {
  CandidateSet s;
  s.claim_id = std::move(id);
  for (std::size_t i = 0; i < labels.size(); ++i) s.candidates.push_back("d" + std::to_string(i));
  s.labels = std::move(labels);
  return s;
}

}  // namespace

TEST_CASE("two-claim example separates micro from macro") {
  // claim a: c=1, hit in top 1; claim b: c=2, one of them in top 1
  std::vector<RankedClaim> r{rank_claim(make_set("a", {1, 0, 0}), std::vector<double>{3, 2, 1}),
                             rank_claim(make_set("b", {1, 0, 1}), std::vector<double>{3, 2, 1})};
  CHECK(recall_macro(r, 1) == 75.0);
  CHECK(recall_micro(r, 1) == doctest::Approx(200.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("perfect ranking scores 100 everywhere") {
  std::vector<RankedClaim> r{rank_claim(make_set("a", {0, 1, 1, 0}), std::vector<double>{0, 5, 4, 1})};
  CHECK(recall_micro(r, 2) == 100.0);
  CHECK(recall_macro(r, 2) == 100.0);
  CHECK(dcg(r) == 100.0);
}

TEST_CASE("single positive at position two") {
  std::vector<RankedClaim> r{rank_claim(make_set("a", {0, 1, 0}), std::vector<double>{3, 2, 1})};
  CHECK(dcg(r) == doctest::Approx(100.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK(dcg(r) == doctest::Approx(63.093).epsilon(1e-5));
}

TEST_CASE("ties rank by ascending doc id") {
  CandidateSet s;
  s.claim_id = "a";
  s.candidates = {"z", "b", "m"};
  s.labels = {1, 0, 0};
  const RankedClaim r = rank_claim(s, std::vector<double>{0, 0, 0});
  CHECK(r.ranked_doc_ids == std::vector<std::string>{"b", "m", "z"});
  CHECK(r.relevance == std::vector<int>{0, 0, 1});
}

TEST_CASE("errors") {
  std::vector<RankedClaim> none;
  CHECK_THROWS_AS(recall_micro(none, 1), EmptyError);
  CHECK_THROWS_AS(dcg(none), EmptyError);
  CHECK_THROWS_AS(rank_claim(make_set("a", {1, 0}), std::vector<double>{1}), AlignmentError);
  std::vector<RankedClaim> r{rank_claim(make_set("a", {0, 0}), std::vector<double>{1, 2})};
  CHECK_THROWS_AS(recall_macro(r, 1), LabelError);
  std::vector<CandidateSet> sets{make_set("a", {1, 0})};
  std::vector<ClaimVector> scores{{"b", {1, 2}}};
  CHECK_THROWS_AS(evaluate(sets, scores), AlignmentError);
}

TEST_CASE("metrics match a brute-force oracle on 1000 random instances") {
  Rng rng(2024);
  std::vector<Instance> xs;
  for (std::size_t i = 0; i < 1000; ++i) xs.push_back(random_instance(rng, i));
  const auto ranked = rank_all(xs);
  const MetricOracle oracle(xs);
  for (std::size_t k = 1; k <= 10; ++k) {
    CHECK(recall_micro(ranked, k) == oracle.micro(k));
    CHECK(recall_macro(ranked, k) == oracle.macro(k));
  }
  CHECK(std::abs(dcg(ranked) - oracle.dcg()) <= 1e-9);

  // per-instance too, so a compensating error cannot hide in the mean
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::vector<RankedClaim> one{ranked[i]};
    const MetricOracle o1(std::vector<Instance>{xs[i]});
    for (std::size_t k = 1; k <= 5; ++k) {
      CHECK(recall_micro(one, k) == o1.micro(k));
      CHECK(recall_macro(one, k) == o1.macro(k));
    }
    CHECK(std::abs(dcg(one) - o1.dcg()) <= 1e-9);
  }
}

TEST_CASE("recall is monotone in k and reaches 100 at k = C") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<Instance> xs;
    for (std::size_t i = 0; i < 20; ++i) {
      Instance in = random_instance(rng, i, 2);
      in.set.labels = {1, static_cast<int>(rng.below(2))};
      xs.push_back(in);
    }
    const auto ranked = rank_all(xs);
    CHECK(recall_micro(ranked, 2) == 100.0);
    CHECK(recall_macro(ranked, 2) == 100.0);
    CHECK(recall_micro(ranked, 1) <= recall_micro(ranked, 2));
  }
  Rng rng(7);
  std::vector<Instance> xs;
  for (std::size_t i = 0; i < 200; ++i) xs.push_back(random_instance(rng, i));
  const auto ranked = rank_all(xs);
  for (std::size_t k = 1; k < 10; ++k) {
    CHECK(recall_micro(ranked, k) <= recall_micro(ranked, k + 1));
    CHECK(recall_macro(ranked, k) <= recall_macro(ranked, k + 1));
  }
  CHECK(recall_micro(ranked, 10) == 100.0);
  CHECK(recall_macro(ranked, 10) == 100.0);
}

TEST_CASE("micro equals macro when every claim has the same number of positives") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Instance> xs;
    const std::size_t c = 1 + rng.below(2);
    for (std::size_t i = 0; i < 10; ++i) {
      Instance in = random_instance(rng, i, 4);
      in.set.labels.assign(4, 0);
      for (std::size_t k = 0; k < c; ++k) in.set.labels[k] = 1;
      xs.push_back(in);
    }
    const auto ranked = rank_all(xs);
    CHECK(recall_micro(ranked, 2) == doctest::Approx(recall_macro(ranked, 2)).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant under monotone score transforms") {
  Rng rng(5);
  std::vector<Instance> xs, ys;
  for (std::size_t i = 0; i < 100; ++i) {
    Instance in = random_instance(rng, i);
    Instance out = in;
    for (double& s : out.scores) s = std::exp(0.5 * s) - 3.0;
    xs.push_back(in);
    ys.push_back(out);
  }
  const auto a = rank_all(xs), b = rank_all(ys);
  for (std::size_t k = 1; k <= 5; ++k) CHECK(recall_micro(a, k) == recall_micro(b, k));
  CHECK(dcg(a) == dcg(b));
}

TEST_CASE("union identities") {
  Rng rng(11);
  std::vector<Instance> xs;
  for (std::size_t i = 0; i < 60; ++i) xs.push_back(random_instance(rng, i));
  const auto all = rank_all(xs);
  const std::vector<RankedClaim> a(all.begin(), all.begin() + 25), b(all.begin() + 25, all.end());
  std::size_t ca = 0, cb = 0;
  for (const auto& r : a) ca += r.num_relevant;
  for (const auto& r : b) cb += r.num_relevant;
  const double micro = (recall_micro(a, 3) * double(ca) + recall_micro(b, 3) * double(cb)) / double(ca + cb);
  const double macro = (recall_macro(a, 3) * 25.0 + recall_macro(b, 3) * 35.0) / 60.0;
  CHECK(recall_micro(all, 3) == doctest::Approx(micro).epsilon(1e-12));
  CHECK(recall_macro(all, 3) == doctest::Approx(macro).epsilon(1e-12));
}

TEST_CASE("evaluate: oracle, anti-oracle and zero scores") {
  std::vector<CandidateSet> sets{make_set("a", {1, 0, 0, 0}), make_set("b", {0, 1, 1, 0}),
                                 make_set("c", {0, 0, 0, 1})};
  auto scores_from = [&](auto f) {
    std::vector<ClaimVector> out;
    for (const auto& s : sets) {
      ClaimVector v{s.claim_id, {}};
      for (int y : s.labels) v.values.push_back(f(y));
      out.push_back(v);
    }
    return out;
  };
  const RankingReport best = evaluate(sets, scores_from([](int y) { return double(y); }));
  CHECK(best.r1 == 75.0);  // claim b has two positives, only one fits in the top 1
  CHECK(best.recall_micro3 == 100.0);
  CHECK(best.recall_macro5 == 100.0);
  CHECK(best.dcg == 100.0);
  CHECK(best.n == 3);

  // anti-oracle: positives sink to the bottom; ties among negatives by id
  const RankingReport worst = evaluate(sets, scores_from([](int y) { return -double(y); }));
  // a: pos at 4; b: pos at 3,4; c: pos at 4.
  CHECK(worst.r1 == 0.0);
  CHECK(worst.recall_micro3 == doctest::Approx(100.0 / 4.0).epsilon(1e-15));
  CHECK(worst.recall_macro3 == doctest::Approx(100.0 * 0.5 / 3.0).epsilon(1e-15));
  CHECK(worst.recall_micro5 == 100.0);
  const double l3 = 1 / std::log2(3.0), l4 = 1 / std::log2(4.0), l5 = 1 / std::log2(5.0);
  const double expected = 100.0 * (l5 + (l4 + l5) / (1 + l3) + l5) / 3.0;
  CHECK(worst.dcg == doctest::Approx(expected).epsilon(1e-14));

  // all zero: order is d0, d1, d2, d3
  const RankingReport zero = evaluate(sets, scores_from([](int) { return 0.0; }));
  CHECK(zero.r1 == doctest::Approx(100.0 / 4.0).epsilon(1e-15));
  CHECK(zero.recall_micro3 == doctest::Approx(300.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("report json round-trips") {
  RankingReport r{1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7};
  const RankingReport back = report_from_json(report_json(r));
  CHECK(back.r1 == r.r1);
  CHECK(back.dcg == r.dcg);
  CHECK(back.n == r.n);
  CHECK(report_table(r).find("DCG") != std::string::npos);
}
