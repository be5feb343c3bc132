#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdret/corpus.hpp"

namespace kdret {

// 64-bit FNV-1a, used for checkpoint and artifact fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string file_hash(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// {"id": string, "text": string} per line.
std::vector<Document> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const Document> docs);

// {"id": string, "text": string, "relevant_doc_ids": [string, ...]} per line.
std::vector<Claim> read_claims(const std::filesystem::path& path);
void write_claims(const std::filesystem::path& path, std::span<const Claim> claims);

// {"claim_id", "candidates": [doc_id x C], "labels": [0|1 x C]} per line.
std::vector<CandidateSet> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, std::span<const CandidateSet> sets);

// Per-claim real vectors aligned with the dataset candidate order. Used for
// score files ({"claim_id", "scores"}) and teacher logit caches
// ({"claim_id", "logits"}); `field` names the array.
struct ClaimVector {
  std::string claim_id;
  std::vector<double> values;
};
std::vector<ClaimVector> read_claim_vectors(const std::filesystem::path& path, const std::string& field);
void write_claim_vectors(const std::filesystem::path& path, std::span<const ClaimVector> rows,
                         const std::string& field);

}  // namespace kdret
