#pragma once

#include <cstdint>
#include <vector>

#include "kdret/corpus.hpp"

namespace kdret {

// Toy corpus with planted lexical-overlap relevance.
//
// Words come in two pools. Each document is a random sequence mixing
// `doc_entities` entity words with `doc_fillers` filler words. A claim quotes
// a contiguous span of its gold document and is padded on both sides with
// random entities and with fillers borrowed from other documents, so TF-IDF
// mining returns negatives that share surface words with the claim. A
// `multi_gold` share of claims quote two documents and list both as relevant.
struct ToyConfig {
  std::size_t docs = 200;
  std::size_t claims = 500;
  std::size_t entity_words = 249;
  std::size_t filler_words = 249;
  std::size_t doc_entities = 8;
  std::size_t doc_fillers = 32;
  std::size_t span_min = 8;  // quoted span length; multi-gold claims quote span_min - 1 from each
  std::size_t span_max = 10;
  std::size_t claim_noise_entities = 1;
  std::size_t claim_fillers_min = 1;
  std::size_t claim_fillers_max = 2;
  double multi_gold = 0.1;
  std::uint64_t seed = 0;
};

struct ToyData {
  std::vector<Document> docs;
  std::vector<Claim> claims;
};

ToyData make_toy(const ToyConfig& cfg);

}  // namespace kdret
