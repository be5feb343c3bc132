#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kdret {

class Corpus;

// Unigrams followed by space-joined bigrams.
std::vector<std::string> tfidf_features(std::span<const std::string> tokens);

struct SparseVector {
  std::vector<std::uint32_t> terms;  // ascending
  std::vector<double> weights;
  double norm = 0.0;
};

struct ScoredDoc {
  std::size_t doc = 0;  // corpus position
  double score = 0.0;
};

// Exact TF-IDF index over unigram + bigram features.
//   tf  = raw count
//   idf = ln((1 + D) / (1 + df)) + 1
// Cosine similarity is dot / (|q| |d|), or 0 when either norm is 0. Dot
// products and squared norms sum their addends in ascending value order, so
// mathematically tied scores compare equal and fall back to the id order.
class TfidfIndex {
 public:
  // EmptyCorpusError when the corpus has no documents or only empty ones.
  static TfidfIndex build(const Corpus& corpus);

  std::size_t num_docs() const noexcept { return docs_.size(); }
  std::size_t num_terms() const noexcept { return idf_.size(); }
  const std::string& doc_id(std::size_t doc) const { return doc_ids_[doc]; }
  const SparseVector& doc_vector(std::size_t doc) const { return docs_[doc]; }
  // 0 for terms outside the index.
  double idf(const std::string& term) const;

  // Terms outside the index are dropped.
  SparseVector vectorize(std::span<const std::string> tokens) const;

  double cosine(const SparseVector& query, std::size_t doc) const;
  // Cosine against every document, by corpus position.
  std::vector<double> scores(const SparseVector& query) const;

  // Descending score, ties by ascending document id.
  bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) const;

 private:
  std::unordered_map<std::string, std::uint32_t> term_ids_;
  std::vector<double> idf_;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> postings_;  // term -> (doc, weight)
  std::vector<SparseVector> docs_;
  std::vector<std::string> doc_ids_;
};

// The k most similar documents to a claim, exact. InsufficientCorpusError if k
// exceeds the corpus size.
std::vector<ScoredDoc> mine_candidates(const TfidfIndex& index, std::span<const std::string> claim_tokens,
                                       std::size_t k);

// Full ranking of the corpus.
std::vector<ScoredDoc> rank_all(const TfidfIndex& index, std::span<const std::string> claim_tokens);

}  // namespace kdret
