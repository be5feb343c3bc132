#include "kdret/corpus.hpp"

#include <algorithm>
#include <unordered_set>

#include "kdret/errors.hpp"
#include "kdret/rng.hpp"
#include "kdret/text.hpp"
#include "kdret/tfidf.hpp"

namespace kdret {

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  tokens_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    const std::string& id = docs_[i].id;
    if (id.empty()) throw FormatError("document " + std::to_string(i) + " has an empty id");
    if (!index_.emplace(id, i).second) throw FormatError("duplicate document id '" + id + "'");
    tokens_.push_back(tokenize(docs_[i].text));
  }
}

std::optional<std::size_t> Corpus::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Corpus::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw AlignmentError("unknown document id '" + id + "'");
  return it->second;
}

std::size_t CandidateSet::num_positive() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

void validate_candidate_set(const CandidateSet& set, std::size_t C) {
  if (set.candidates.size() != C || set.labels.size() != C)
    throw AlignmentError("claim '" + set.claim_id + "' has " + std::to_string(set.candidates.size()) +
                         " candidates / " + std::to_string(set.labels.size()) + " labels, expected " +
                         std::to_string(C));
  std::unordered_set<std::string> seen;
  for (const auto& id : set.candidates)
    if (!seen.insert(id).second)
      throw AlignmentError("claim '" + set.claim_id + "' lists document '" + id + "' twice");
  for (int y : set.labels)
    if (y != 0 && y != 1) throw LabelError("claim '" + set.claim_id + "' has a non-binary label");
  if (set.num_positive() == 0) throw LabelError("claim '" + set.claim_id + "' has no positive candidate");
  if (set.teacher_logits && set.teacher_logits->size() != C)
    throw AlignmentError("claim '" + set.claim_id + "' teacher logits are not aligned with candidates");
}

void validate_claims(std::span<const Claim> claims, const Corpus& corpus) {
  std::unordered_set<std::string> ids;
  for (const Claim& c : claims) {
    if (c.id.empty()) throw FormatError("claim with an empty id");
    if (!ids.insert(c.id).second) throw FormatError("duplicate claim id '" + c.id + "'");
    if (c.relevant_doc_ids.empty()) throw AlignmentError("claim '" + c.id + "' has no relevant documents");
    for (const auto& d : c.relevant_doc_ids)
      if (!corpus.find(d)) throw AlignmentError("claim '" + c.id + "' cites unknown document '" + d + "'");
  }
}

namespace {

struct RankedClaimDocs {
  std::vector<ScoredDoc> ranking;
  std::vector<std::size_t> rank_of;  // corpus position -> rank
  std::vector<std::size_t> gold;     // corpus positions, most similar first
};

RankedClaimDocs rank_claim(const Claim& claim, const Corpus& corpus, const TfidfIndex& index) {
  RankedClaimDocs r;
  r.ranking = rank_all(index, tokenize(claim.text));
  r.rank_of.resize(r.ranking.size());
  for (std::size_t k = 0; k < r.ranking.size(); ++k) r.rank_of[r.ranking[k].doc] = k;
  if (claim.relevant_doc_ids.empty())
    throw AlignmentError("claim '" + claim.id + "' has no relevant documents");
  for (const auto& id : claim.relevant_doc_ids) r.gold.push_back(corpus.index_of(id));
  std::sort(r.gold.begin(), r.gold.end(),
            [&](std::size_t a, std::size_t b) { return r.rank_of[a] < r.rank_of[b]; });
  r.gold.erase(std::unique(r.gold.begin(), r.gold.end()), r.gold.end());
  return r;
}

CandidateSet build_set(const Claim& claim, const Corpus& corpus, const RankedClaimDocs& r, std::size_t C,
                       std::size_t mine_depth) {
  const std::size_t depth = std::min(std::max(mine_depth == 0 ? C : mine_depth, C), r.ranking.size());
  const std::size_t keep = std::min(C, r.gold.size());
  std::unordered_set<std::size_t> gold(r.gold.begin(), r.gold.end());
  std::unordered_set<std::size_t> retained(r.gold.begin(), r.gold.begin() + static_cast<std::ptrdiff_t>(keep));

  CandidateSet set;
  set.claim_id = claim.id;
  const std::size_t negatives_needed = C - keep;
  std::size_t negatives = 0;
  std::unordered_set<std::size_t> placed;
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t d = r.ranking[k].doc;
    if (retained.count(d)) {
      set.candidates.push_back(corpus.doc(d).id);
      set.labels.push_back(1);
      placed.insert(d);
    } else if (!gold.count(d) && negatives < negatives_needed) {
      set.candidates.push_back(corpus.doc(d).id);
      set.labels.push_back(0);
      ++negatives;
    }
  }
  for (std::size_t i = 0; i < keep; ++i) {
    if (placed.count(r.gold[i])) continue;
    set.candidates.push_back(corpus.doc(r.gold[i]).id);
    set.labels.push_back(1);
  }
  validate_candidate_set(set, C);
  return set;
}

void require_corpus_size(const Corpus& corpus, std::size_t C) {
  if (C == 0) throw ConfigError("C must be at least 1");
  if (corpus.size() < C)
    throw InsufficientCorpusError("corpus has " + std::to_string(corpus.size()) +
                                  " documents, fewer than C = " + std::to_string(C));
}

}  // namespace

CandidateSet assemble_candidates(const Claim& claim, const Corpus& corpus, const TfidfIndex& index,
                                 std::size_t C, std::size_t mine_depth) {
  require_corpus_size(corpus, C);
  return build_set(claim, corpus, rank_claim(claim, corpus, index), C, mine_depth);
}

std::vector<CandidateSet> assemble_dataset(std::span<const Claim> claims, const Corpus& corpus,
                                           const TfidfIndex& index, std::size_t C, std::size_t mine_depth) {
  require_corpus_size(corpus, C);
  std::vector<CandidateSet> out;
  out.reserve(claims.size());
  for (const Claim& c : claims) out.push_back(assemble_candidates(c, corpus, index, C, mine_depth));
  return out;
}

std::vector<CoverageRow> coverage_stats(std::span<const Claim> claims, const Corpus& corpus,
                                        const TfidfIndex& index, std::span<const std::size_t> Cs) {
  std::vector<CoverageRow> rows;
  for (std::size_t C : Cs) {
    require_corpus_size(corpus, C);
    rows.push_back({C, 0.0, 0.0});
  }
  if (claims.empty()) return rows;
  std::vector<std::size_t> retained(Cs.size(), 0), mined(Cs.size(), 0);
  for (const Claim& claim : claims) {
    const RankedClaimDocs r = rank_claim(claim, corpus, index);
    for (std::size_t k = 0; k < Cs.size(); ++k) {
      const CandidateSet set = build_set(claim, corpus, r, Cs[k], 0);
      std::unordered_set<std::string> present(set.candidates.begin(), set.candidates.end());
      bool all_in = true, all_mined = true;
      for (std::size_t g : r.gold) {
        all_in = all_in && present.count(corpus.doc(g).id) > 0;
        all_mined = all_mined && r.rank_of[g] < Cs[k];
      }
      retained[k] += all_in;
      mined[k] += all_mined;
    }
  }
  const double n = static_cast<double>(claims.size());
  for (std::size_t k = 0; k < Cs.size(); ++k) {
    rows[k].retained_pct = 100.0 * static_cast<double>(retained[k]) / n;
    rows[k].mined_pct = 100.0 * static_cast<double>(mined[k]) / n;
  }
  return rows;
}

SplitSpec SplitSpec::reference_ratio(std::size_t n) {
  constexpr std::size_t kTotal = 175000;
  SplitSpec s;
  s.dev = (n * 20000 + kTotal / 2) / kTotal;
  s.test = (n * 10000 + kTotal / 2) / kTotal;
  s.train = n - s.dev - s.test;
  return s;
}

ClaimSplit split_claims(std::span<const Claim> claims, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.train + spec.dev + spec.test > claims.size())
    throw SplitError("split sizes " + std::to_string(spec.train) + "/" + std::to_string(spec.dev) + "/" +
                     std::to_string(spec.test) + " exceed " + std::to_string(claims.size()) + " claims");
  std::vector<std::size_t> order(claims.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> part(claims.size(), 0);  // 0 train, 1 dev, 2 test
  for (std::size_t k = 0; k < spec.dev; ++k) part[order[k]] = 1;
  for (std::size_t k = spec.dev; k < spec.dev + spec.test; ++k) part[order[k]] = 2;
  ClaimSplit out;
  for (std::size_t i = 0; i < claims.size(); ++i) {
    auto& dst = part[i] == 0 ? out.train : part[i] == 1 ? out.dev : out.test;
    dst.push_back(claims[i]);
  }
  return out;
}

}  // namespace kdret
