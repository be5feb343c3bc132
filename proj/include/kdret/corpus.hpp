#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kdret {

class TfidfIndex;

struct Document {
  std::string id;
  std::string text;
};

struct Claim {
  std::string id;
  std::string text;
  std::vector<std::string> relevant_doc_ids;
};

// Documents with unique non-empty ids plus their token lists.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs);

  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  const Document& doc(std::size_t i) const { return docs_[i]; }
  const std::vector<Document>& docs() const noexcept { return docs_; }
  const std::vector<std::string>& tokens(std::size_t i) const { return tokens_[i]; }
  const std::vector<std::vector<std::string>>& all_tokens() const noexcept { return tokens_; }

  std::optional<std::size_t> find(const std::string& id) const;
  // AlignmentError if the id is unknown.
  std::size_t index_of(const std::string& id) const;

 private:
  std::vector<Document> docs_;
  std::vector<std::vector<std::string>> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One claim with exactly C candidate documents and their binary labels.
struct CandidateSet {
  std::string claim_id;
  std::vector<std::string> candidates;
  std::vector<int> labels;
  std::optional<std::vector<double>> teacher_logits;

  std::size_t size() const noexcept { return candidates.size(); }
  std::size_t num_positive() const;
};

// Checks |candidates| == |labels| == C, no duplicates, at least one positive.
void validate_candidate_set(const CandidateSet& set, std::size_t C);

// Builds the candidate list for one claim.
//
// Gold positives are always kept; when a claim has more than C of them only the
// C most TF-IDF-similar survive. The remaining C - |positives| slots go to the
// best-ranked non-gold documents among the top `mine_depth` mined results
// (mine_depth 0 means C). Order: the mined list with positives at their mined
// rank, followed by positives that fell outside the mined list, in similarity
// order.
CandidateSet assemble_candidates(const Claim& claim, const Corpus& corpus, const TfidfIndex& index,
                                 std::size_t C, std::size_t mine_depth = 0);

std::vector<CandidateSet> assemble_dataset(std::span<const Claim> claims, const Corpus& corpus,
                                           const TfidfIndex& index, std::size_t C,
                                           std::size_t mine_depth = 0);

struct CoverageRow {
  std::size_t C = 0;
  // Claims whose every gold document is in its candidate set.
  double retained_pct = 0.0;
  // Claims whose every gold document is in the TF-IDF top C.
  double mined_pct = 0.0;
};

std::vector<CoverageRow> coverage_stats(std::span<const Claim> claims, const Corpus& corpus,
                                        const TfidfIndex& index, std::span<const std::size_t> Cs);

struct SplitSpec {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;

  // 145000 / 20000 / 10000 scaled to n claims; dev and test are rounded to
  // nearest and train takes the rest.
  static SplitSpec reference_ratio(std::size_t n);
};

struct ClaimSplit {
  std::vector<Claim> train;
  std::vector<Claim> dev;
  std::vector<Claim> test;
};

// Seeded shuffle, then the first `dev` claims go to dev, the next `test` to
// test, and everything else (including any claims beyond the requested
// sizes) to train. Each partition keeps the input order.
ClaimSplit split_claims(std::span<const Claim> claims, const SplitSpec& spec, std::uint64_t seed);

// AlignmentError unless every claim has a non-empty, corpus-resident gold set.
void validate_claims(std::span<const Claim> claims, const Corpus& corpus);

}  // namespace kdret
