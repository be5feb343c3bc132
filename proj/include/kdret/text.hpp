#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kdret {

using TokenId = std::int32_t;

// Lowercases ASCII letters and splits on every run of characters that are not
// ASCII letters or digits. Empty pieces are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Token <-> id map with reserved ids PAD = 0 and UNK = 1.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  // Tokens ordered by descending frequency, then lexicographically. Tokens
  // seen fewer than min_count times map to UNK; max_size (0 = unlimited)
  // caps the total size including the two reserved entries.
  static Vocabulary build(std::span<const std::vector<std::string>> token_lists,
                          std::size_t min_count = 1, std::size_t max_size = 0);
  // Inverse of tokens(); the list must start with the reserved entries.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  // Ids for `tokens`, truncated to max_len (0 = no limit).
  std::vector<TokenId> encode(std::span<const std::string> tokens, std::size_t max_len = 0) const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace kdret
