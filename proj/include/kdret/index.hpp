#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdret/corpus.hpp"
#include "kdret/models.hpp"
#include "kdret/text.hpp"

namespace kdret {

struct CostCounts {
  std::uint64_t doc_encoder = 0;
  std::uint64_t claim_encoder = 0;
  std::uint64_t join_head = 0;
  std::uint64_t teacher_joint = 0;

  std::uint64_t encoder_calls() const noexcept { return doc_encoder + claim_encoder; }
  bool operator==(const CostCounts&) const = default;
};

// Exact call counters, safe to bump from several threads.
class CostLedger {
 public:
  void add_doc_encoder(std::uint64_t n = 1) noexcept { doc_.fetch_add(n, std::memory_order_relaxed); }
  void add_claim_encoder(std::uint64_t n = 1) noexcept { claim_.fetch_add(n, std::memory_order_relaxed); }
  void add_join_head(std::uint64_t n = 1) noexcept { join_.fetch_add(n, std::memory_order_relaxed); }
  void add_teacher_joint(std::uint64_t n = 1) noexcept { teacher_.fetch_add(n, std::memory_order_relaxed); }
  CostCounts counts() const noexcept;
  void reset() noexcept;

 private:
  std::atomic<std::uint64_t> doc_{0}, claim_{0}, join_{0}, teacher_{0};
};

nlohmann::json cost_json(const CostCounts& c);

// Precomputed student document encodings.
//
// File layout (little-endian):
//   8 bytes  magic "KDRIDX01"
//   u32      checkpoint hash length h, then h bytes
//   u64      dim
//   u64      count
//   count x { u32 id length n, n bytes id, f64[dim] encoding }
struct DocIndex {
  std::string checkpoint_hash;
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> values;  // count x dim, row-major

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  bool operator==(const DocIndex&) const = default;
};

std::string serialize_index(const DocIndex& index);
DocIndex parse_index(std::string_view bytes);  // FormatError
void save_index(const std::filesystem::path& path, const DocIndex& index);
DocIndex load_index(const std::filesystem::path& path);

// Fingerprint of a checkpoint's serialized bytes.
std::string checkpoint_hash(const Checkpoint& ckpt);

// One document-encoder call per document. VocabError if the vocabulary does
// not match the model's embedding table.
DocIndex build_index(const StudentModel& model, const Vocabulary& vocab, const Corpus& corpus,
                     std::string checkpoint_hash = {}, CostLedger* ledger = nullptr);
DocIndex build_index(const Checkpoint& ckpt, const Corpus& corpus, CostLedger* ledger = nullptr);

struct Hit {
  std::string doc_id;
  double score = 0.0;
  bool operator==(const Hit&) const = default;
};

// Scores every indexed document against the claim with one claim-encoder call
// and |index| join-head evaluations. Descending score, ties by ascending id.
// EmptyIndexError on an empty index, ConfigError unless 1 <= k <= |index|,
// ShapeError if the index dimension differs from the model.
std::vector<Hit> retrieve(const StudentModel& model, const Vocabulary& vocab, const DocIndex& index,
                          std::string_view claim_text, std::size_t k, CostLedger* ledger = nullptr);

// Scores of every claim against every indexed document, claim-major, using
// the index: N claim-encoder calls and N x D join-head evaluations.
std::vector<std::vector<double>> student_score_all(const StudentModel& model, const Vocabulary& vocab,
                                                   const DocIndex& index, std::span<const Claim> claims,
                                                   CostLedger* ledger = nullptr);
// Same matrix from the teacher: N x D joint calls.
std::vector<std::vector<double>> teacher_score_all(const TeacherModel& model, const Vocabulary& vocab,
                                                   const Corpus& corpus, std::span<const Claim> claims,
                                                   CostLedger* ledger = nullptr);

struct BenchmarkReport {
  std::size_t N = 0, D = 0;
  CostCounts student, teacher;
  double student_seconds = 0.0;  // index build plus scoring every claim
  double teacher_seconds = 0.0;
  double speedup = 0.0;  // teacher_seconds / student_seconds
};

// Full all-pairs evaluation both ways over the corpus and claims.
BenchmarkReport benchmark(const StudentModel& student, const Vocabulary& student_vocab, const TeacherModel& teacher,
                          const Vocabulary& teacher_vocab, const Corpus& corpus, std::span<const Claim> claims);

nlohmann::json benchmark_json(const BenchmarkReport& r);

}  // namespace kdret
