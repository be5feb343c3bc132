#pragma once

#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "kdret/corpus.hpp"
#include "kdret/io.hpp"

namespace kdret {

// Candidates sorted by descending score, ties by ascending doc id.
struct RankedClaim {
  std::string claim_id;
  std::vector<std::string> ranked_doc_ids;
  std::vector<int> relevance;  // aligned with ranked_doc_ids
  std::size_t num_relevant = 0;
};

// AlignmentError unless there is one finite score per candidate.
RankedClaim rank_claim(const CandidateSet& set, std::span<const double> scores);

// All three are percentages. EmptyError on an empty claim list, LabelError if
// a claim has no relevant document, ConfigError for k = 0. A k beyond a
// claim's list length counts the whole list.
//   recall_macro(k) = 100/N * sum_i hits_i(k) / c_i
//   recall_micro(k) = 100 * sum_i hits_i(k) / sum_i c_i
//   dcg             = 100/N * sum_i DCG_i / IDCG_i, gains r_ij / log2(j + 1)
double recall_macro(std::span<const RankedClaim> ranked, std::size_t k);
double recall_micro(std::span<const RankedClaim> ranked, std::size_t k);
double dcg(std::span<const RankedClaim> ranked);

struct RankingReport {
  double r1 = 0.0;  // recall_micro(1)
  double recall_micro3 = 0.0;
  double recall_macro3 = 0.0;
  double recall_micro5 = 0.0;
  double recall_macro5 = 0.0;
  double dcg = 0.0;
  std::size_t n = 0;
};

RankingReport make_report(std::span<const RankedClaim> ranked);

// Scores are matched to candidate sets by claim id. AlignmentError if a claim
// has no scores or the wrong number.
RankingReport evaluate(std::span<const CandidateSet> sets, std::span<const ClaimVector> scores);

nlohmann::json report_json(const RankingReport& r);
RankingReport report_from_json(const nlohmann::json& j);
std::string report_table(const RankingReport& r);

}  // namespace kdret
