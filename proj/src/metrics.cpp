#include "kdret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "kdret/errors.hpp"

namespace kdret {

RankedClaim rank_claim(const CandidateSet& set, std::span<const double> scores) {
  if (scores.size() != set.candidates.size() || set.labels.size() != set.candidates.size())
    throw AlignmentError("claim '" + set.claim_id + "' has " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(set.candidates.size()) + " candidates");
  for (double s : scores)
    if (!std::isfinite(s)) throw AlignmentError("claim '" + set.claim_id + "' has a non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return set.candidates[a] < set.candidates[b];
  });
  RankedClaim r;
  r.claim_id = set.claim_id;
  for (std::size_t i : order) {
    r.ranked_doc_ids.push_back(set.candidates[i]);
    r.relevance.push_back(set.labels[i]);
    r.num_relevant += set.labels[i] != 0;
  }
  return r;
}

namespace {

void check_input(std::span<const RankedClaim> ranked, std::size_t k) {
  if (ranked.empty()) throw EmptyError("no claims to evaluate");
  if (k == 0) throw ConfigError("k must be at least 1");
  for (const auto& r : ranked)
    if (r.num_relevant == 0) throw LabelError("claim '" + r.claim_id + "' has no relevant document");
}

std::size_t hits(const RankedClaim& r, std::size_t k) {
  std::size_t h = 0;
  for (std::size_t j = 0; j < std::min(k, r.relevance.size()); ++j) h += r.relevance[j] != 0;
  return h;
}

}  // namespace

double recall_macro(std::span<const RankedClaim> ranked, std::size_t k) {
  check_input(ranked, k);
  double s = 0.0;
  for (const auto& r : ranked) s += static_cast<double>(hits(r, k)) / static_cast<double>(r.num_relevant);
  return 100.0 * s / static_cast<double>(ranked.size());
}

double recall_micro(std::span<const RankedClaim> ranked, std::size_t k) {
  check_input(ranked, k);
  std::size_t h = 0, c = 0;
  for (const auto& r : ranked) {
    h += hits(r, k);
    c += r.num_relevant;
  }
  return 100.0 * static_cast<double>(h) / static_cast<double>(c);
}

double dcg(std::span<const RankedClaim> ranked) {
  check_input(ranked, 1);
  double total = 0.0;
  for (const auto& r : ranked) {
    double got = 0.0, ideal = 0.0;
    for (std::size_t j = 0; j < r.relevance.size(); ++j) {
      const double discount = std::log2(static_cast<double>(j) + 2.0);
      if (r.relevance[j] != 0) got += 1.0 / discount;
      if (j < r.num_relevant) ideal += 1.0 / discount;
    }
    total += got / ideal;
  }
  return 100.0 * total / static_cast<double>(ranked.size());
}

RankingReport make_report(std::span<const RankedClaim> ranked) {
  RankingReport r;
  r.r1 = recall_micro(ranked, 1);
  r.recall_micro3 = recall_micro(ranked, 3);
  r.recall_macro3 = recall_macro(ranked, 3);
  r.recall_micro5 = recall_micro(ranked, 5);
  r.recall_macro5 = recall_macro(ranked, 5);
  r.dcg = dcg(ranked);
  r.n = ranked.size();
  return r;
}

RankingReport evaluate(std::span<const CandidateSet> sets, std::span<const ClaimVector> scores) {
  std::unordered_map<std::string, const ClaimVector*> by_id;
  for (const auto& s : scores) by_id[s.claim_id] = &s;
  std::vector<RankedClaim> ranked;
  ranked.reserve(sets.size());
  for (const auto& set : sets) {
    auto it = by_id.find(set.claim_id);
    if (it == by_id.end()) throw AlignmentError("no scores for claim '" + set.claim_id + "'");
    ranked.push_back(rank_claim(set, it->second->values));
  }
  return make_report(ranked);
}

nlohmann::json report_json(const RankingReport& r) {
  return {{"R1", r.r1},
          {"recall_micro3", r.recall_micro3},
          {"recall_macro3", r.recall_macro3},
          {"recall_micro5", r.recall_micro5},
          {"recall_macro5", r.recall_macro5},
          {"DCG", r.dcg},
          {"N", r.n}};
}

RankingReport report_from_json(const nlohmann::json& j) {
  RankingReport r;
  r.r1 = j.at("R1").get<double>();
  r.recall_micro3 = j.at("recall_micro3").get<double>();
  r.recall_macro3 = j.at("recall_macro3").get<double>();
  r.recall_micro5 = j.at("recall_micro5").get<double>();
  r.recall_macro5 = j.at("recall_macro5").get<double>();
  r.dcg = j.at("DCG").get<double>();
  r.n = j.at("N").get<std::size_t>();
  return r;
}

std::string report_table(const RankingReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%8s %10s %10s %10s %10s %8s %8s\n"
                "%8.2f %10.2f %10.2f %10.2f %10.2f %8.2f %8zu\n",
                "R(1)", "micro R(3)", "macro R(3)", "micro R(5)", "macro R(5)", "DCG", "N", r.r1,
                r.recall_micro3, r.recall_macro3, r.recall_micro5, r.recall_macro5, r.dcg, r.n);
  return buf;
}

}  // namespace kdret
