#include "kdret/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <string>

#include "kdret/errors.hpp"
#include "kdret/rng.hpp"

namespace kdret {

namespace {

std::string word(char prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%03zu", prefix, i);
  return buf;
}

// k distinct picks from v.
std::vector<std::string> sample(Rng& rng, std::vector<std::string> v, std::size_t k) {
  rng.shuffle(v);
  v.resize(std::min(k, v.size()));
  return v;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find(' ', pos), text.size());
    out.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

}  // namespace

ToyData make_toy(const ToyConfig& cfg) {
  if (cfg.docs < 2 || cfg.entity_words < cfg.doc_entities || cfg.filler_words < cfg.doc_fillers ||
      cfg.span_min < 2 || cfg.span_max < cfg.span_min || cfg.claim_fillers_max < cfg.claim_fillers_min)
    throw ConfigError("toy config too small");
  Rng rng(cfg.seed);
  std::vector<std::string> entities, fillers;
  for (std::size_t i = 0; i < cfg.entity_words; ++i) entities.push_back(word('e', i));
  for (std::size_t i = 0; i < cfg.filler_words; ++i) fillers.push_back(word('f', i));

  ToyData out;
  std::vector<std::vector<std::string>> doc_ents, doc_fills;
  for (std::size_t d = 0; d < cfg.docs; ++d) {
    doc_ents.push_back(sample(rng, entities, cfg.doc_entities));
    doc_fills.push_back(sample(rng, fillers, cfg.doc_fillers));
    std::vector<std::string> words = doc_ents.back();
    words.insert(words.end(), doc_fills.back().begin(), doc_fills.back().end());
    rng.shuffle(words);
    out.docs.push_back({word('d', d), join(words)});
  }

  std::vector<std::vector<std::string>> doc_words;
  for (const auto& d : out.docs) doc_words.push_back(split_words(d.text));
  for (std::size_t c = 0; c < cfg.claims; ++c) {
    const bool two = rng.uniform01() < cfg.multi_gold;
    std::vector<std::size_t> gold{static_cast<std::size_t>(rng.below(cfg.docs))};
    if (two) {
      std::size_t g2 = static_cast<std::size_t>(rng.below(cfg.docs - 1));
      if (g2 >= gold[0]) ++g2;
      gold.push_back(g2);
    }
    std::vector<std::string> noise;
    for (std::size_t k = 0; k < cfg.claim_noise_entities; ++k) noise.push_back(entities[rng.below(entities.size())]);
    const std::size_t n_fill = cfg.claim_fillers_min + rng.below(cfg.claim_fillers_max - cfg.claim_fillers_min + 1);
    for (std::size_t k = 0; k < n_fill; ++k) {
      std::size_t d = static_cast<std::size_t>(rng.below(cfg.docs));
      while (std::find(gold.begin(), gold.end(), d) != gold.end()) d = static_cast<std::size_t>(rng.below(cfg.docs));
      noise.push_back(doc_fills[d][rng.below(doc_fills[d].size())]);
    }
    rng.shuffle(noise);

    std::vector<std::string> words;
    const std::size_t before = static_cast<std::size_t>(rng.below(noise.size() + 1));
    words.insert(words.end(), noise.begin(), noise.begin() + static_cast<std::ptrdiff_t>(before));
    for (std::size_t g : gold) {
      const auto& dw = doc_words[g];
      std::size_t len = two ? cfg.span_min - 1 : cfg.span_min + rng.below(cfg.span_max - cfg.span_min + 1);
      len = std::min(len, dw.size());
      const std::size_t start = static_cast<std::size_t>(rng.below(dw.size() - len + 1));
      words.insert(words.end(), dw.begin() + static_cast<std::ptrdiff_t>(start),
                   dw.begin() + static_cast<std::ptrdiff_t>(start + len));
    }
    words.insert(words.end(), noise.begin() + static_cast<std::ptrdiff_t>(before), noise.end());

    Claim claim;
    claim.id = word('c', c);
    claim.text = join(words);
    for (std::size_t g : gold) claim.relevant_doc_ids.push_back(out.docs[g].id);
    out.claims.push_back(std::move(claim));
  }
  return out;
}

}  // namespace kdret
