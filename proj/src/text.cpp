#include "kdret/text.hpp"

#include <algorithm>
#include <map>

#include "kdret/errors.hpp"

namespace kdret {

namespace {

bool is_alnum(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (is_alnum(c)) {
      cur.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
}

void Vocabulary::add(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!ids_.emplace(token, id).second) throw VocabError("duplicate vocabulary entry '" + token + "'");
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_lists,
                             std::size_t min_count, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& list : token_lists)
    for (const auto& tok : list) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [tok, n] : ranked) {
    if (n < min_count) break;
    if (max_size != 0 && v.size() >= max_size) break;
    v.add(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken)
    throw VocabError("vocabulary must start with the reserved <pad> and <unk> entries");
  Vocabulary v;
  for (std::size_t i = 2; i < tokens.size(); ++i) v.add(std::move(tokens[i]));
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens, std::size_t max_len) const {
  const std::size_t n = max_len == 0 ? tokens.size() : std::min(max_len, tokens.size());
  std::vector<TokenId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(id(tokens[i]));
  return out;
}

}  // namespace kdret
