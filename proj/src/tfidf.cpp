#include "kdret/tfidf.hpp"

#include <algorithm>
#include <cmath>

#include "kdret/corpus.hpp"
#include "kdret/errors.hpp"

namespace kdret {

std::vector<std::string> tfidf_features(std::span<const std::string> tokens) {
  std::vector<std::string> out(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) out.push_back(tokens[i] + " " + tokens[i + 1]);
  return out;
}

namespace {

// Sorted (term, count) pairs.
std::vector<std::pair<std::uint32_t, std::size_t>> count_terms(std::vector<std::uint32_t> ids) {
  std::sort(ids.begin(), ids.end());
  std::vector<std::pair<std::uint32_t, std::size_t>> out;
  for (std::uint32_t id : ids) {
    if (!out.empty() && out.back().first == id)
      ++out.back().second;
    else
      out.emplace_back(id, 1);
  }
  return out;
}

// Addends are summed in ascending order so equal multisets give equal sums.
double canonical_sum(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

double l2_norm(const std::vector<double>& w) {
  std::vector<double> sq;
  sq.reserve(w.size());
  for (double x : w) sq.push_back(x * x);
  return std::sqrt(canonical_sum(sq));
}

}  // namespace

TfidfIndex TfidfIndex::build(const Corpus& corpus) {
  if (corpus.empty()) throw EmptyCorpusError("cannot index an empty corpus");
  TfidfIndex index;
  std::vector<std::vector<std::uint32_t>> doc_terms(corpus.size());
  std::vector<std::size_t> df;
  bool any_terms = false;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    for (auto& f : tfidf_features(corpus.tokens(d))) {
      auto [it, inserted] = index.term_ids_.emplace(std::move(f), static_cast<std::uint32_t>(df.size()));
      if (inserted) df.push_back(0);
      doc_terms[d].push_back(it->second);
    }
    any_terms = any_terms || !doc_terms[d].empty();
  }
  if (!any_terms) throw EmptyCorpusError("every document in the corpus is empty");

  std::vector<std::vector<std::pair<std::uint32_t, std::size_t>>> counts(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    counts[d] = count_terms(std::move(doc_terms[d]));
    for (const auto& [term, n] : counts[d]) ++df[term];
  }
  const double n_docs = static_cast<double>(corpus.size());
  index.idf_.resize(df.size());
  for (std::size_t t = 0; t < df.size(); ++t)
    index.idf_[t] = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(df[t]))) + 1.0;

  index.postings_.resize(df.size());
  index.docs_.resize(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    SparseVector& v = index.docs_[d];
    for (const auto& [term, n] : counts[d]) {
      const double w = static_cast<double>(n) * index.idf_[term];
      v.terms.push_back(term);
      v.weights.push_back(w);
      index.postings_[term].emplace_back(static_cast<std::uint32_t>(d), w);
    }
    v.norm = l2_norm(v.weights);
    index.doc_ids_.push_back(corpus.doc(d).id);
  }
  return index;
}

double TfidfIndex::idf(const std::string& term) const {
  auto it = term_ids_.find(term);
  return it == term_ids_.end() ? 0.0 : idf_[it->second];
}

SparseVector TfidfIndex::vectorize(std::span<const std::string> tokens) const {
  std::vector<std::uint32_t> ids;
  for (const auto& f : tfidf_features(tokens)) {
    auto it = term_ids_.find(f);
    if (it != term_ids_.end()) ids.push_back(it->second);
  }
  SparseVector v;
  for (const auto& [term, n] : count_terms(std::move(ids))) {
    v.terms.push_back(term);
    v.weights.push_back(static_cast<double>(n) * idf_[term]);
  }
  v.norm = l2_norm(v.weights);
  return v;
}

double TfidfIndex::cosine(const SparseVector& query, std::size_t doc) const {
  const SparseVector& d = docs_.at(doc);
  if (query.norm == 0.0 || d.norm == 0.0) return 0.0;
  std::vector<double> prods;
  std::size_t i = 0, j = 0;
  while (i < query.terms.size() && j < d.terms.size()) {
    if (query.terms[i] < d.terms[j]) {
      ++i;
    } else if (query.terms[i] > d.terms[j]) {
      ++j;
    } else {
      prods.push_back(query.weights[i++] * d.weights[j++]);
    }
  }
  return canonical_sum(prods) / (query.norm * d.norm);
}

std::vector<double> TfidfIndex::scores(const SparseVector& query) const {
  // Products are bucketed per document, then summed canonically.
  std::vector<std::size_t> start(docs_.size() + 1, 0);
  for (std::uint32_t t : query.terms)
    for (const auto& p : postings_[t]) ++start[p.first + 1];
  for (std::size_t d = 0; d < docs_.size(); ++d) start[d + 1] += start[d];
  std::vector<double> prods(start.back());
  std::vector<std::size_t> fill(start.begin(), start.end() - 1);
  for (std::size_t i = 0; i < query.terms.size(); ++i)
    for (const auto& [doc, w] : postings_[query.terms[i]]) prods[fill[doc]++] = query.weights[i] * w;
  std::vector<double> out(docs_.size(), 0.0);
  std::vector<double> buf;
  for (std::size_t d = 0; d < docs_.size(); ++d) {
    if (query.norm == 0.0 || docs_[d].norm == 0.0 || start[d] == start[d + 1]) continue;
    buf.assign(prods.begin() + static_cast<std::ptrdiff_t>(start[d]),
               prods.begin() + static_cast<std::ptrdiff_t>(start[d + 1]));
    out[d] = canonical_sum(buf) / (query.norm * docs_[d].norm);
  }
  return out;
}

bool TfidfIndex::ranks_before(const ScoredDoc& a, const ScoredDoc& b) const {
  if (a.score != b.score) return a.score > b.score;
  return doc_ids_[a.doc] < doc_ids_[b.doc];
}

namespace {

std::vector<ScoredDoc> scored(const TfidfIndex& index, std::span<const std::string> claim_tokens) {
  const std::vector<double> s = index.scores(index.vectorize(claim_tokens));
  std::vector<ScoredDoc> out(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) out[d] = {d, s[d]};
  return out;
}

}  // namespace

std::vector<ScoredDoc> mine_candidates(const TfidfIndex& index, std::span<const std::string> claim_tokens,
                                       std::size_t k) {
  if (k > index.num_docs())
    throw InsufficientCorpusError("asked for " + std::to_string(k) + " candidates from " +
                                  std::to_string(index.num_docs()) + " documents");
  auto all = scored(index, claim_tokens);
  auto cmp = [&](const ScoredDoc& a, const ScoredDoc& b) { return index.ranks_before(a, b); };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), cmp);
  all.resize(k);
  return all;
}

std::vector<ScoredDoc> rank_all(const TfidfIndex& index, std::span<const std::string> claim_tokens) {
  auto all = scored(index, claim_tokens);
  std::sort(all.begin(), all.end(),
            [&](const ScoredDoc& a, const ScoredDoc& b) { return index.ranks_before(a, b); });
  return all;
}

}  // namespace kdret
