#pragma once

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdret/autograd.hpp"
#include "kdret/corpus.hpp"
#include "kdret/errors.hpp"
#include "kdret/metrics.hpp"
#include "kdret/models.hpp"

namespace kdret {

enum class SoftLossType { CE, MSE };
const char* soft_loss_name(SoftLossType t);
SoftLossType parse_soft_loss(const std::string& s);

// T = 0 selects the argmax sentinel: the teacher target becomes one-hot and
// the student side is softened at T = 1.
struct LossConfig {
  double alpha = 0.5;
  double temperature = 1.0;
  SoftLossType soft_loss = SoftLossType::CE;

  void validate() const;  // ConfigError
};

// exp(t_i / T) / sum_j exp(t_j / T), max-shifted. T = 0 gives a one-hot at the
// first maximum. NumericsError on non-finite logits, ConfigError for T < 0.
std::vector<double> temperature_softmax(std::span<const double> logits, double T);

// Minimized forms; the student side uses the same temperature.
//   CE  = -sum_i t'_i log p_i
//   MSE = sum_i (t'_i - p_i)^2
//   hard = -sum_i (y_i / c) log softmax(s)_i,  c = sum_i y_i
double soft_loss_ce(std::span<const double> teacher, std::span<const double> student, double T);
double soft_loss_mse(std::span<const double> teacher, std::span<const double> student, double T);
double hard_loss(std::span<const int> labels, std::span<const double> student);
// alpha * soft + (1 - alpha) * hard. At alpha = 0 the teacher logits are never
// read; at alpha = 1 the labels are never read. CacheError if alpha > 0 and
// teacher is null.
double combined_loss(const LossConfig& cfg, std::span<const int> labels, const std::vector<double>* teacher,
                     std::span<const double> student);

// Tape versions over student logits of shape [1, C].
Var soft_loss_var(Var student, std::span<const double> teacher, double T, SoftLossType type);
Var hard_loss_var(Var student, std::span<const int> labels);
Var combined_loss_var(const LossConfig& cfg, Var student, std::span<const int> labels,
                      const std::vector<double>* teacher);

// Teacher logits per claim, aligned with that claim's candidate order.
struct TeacherLogitCache {
  std::string checkpoint_hash;
  std::unordered_map<std::string, std::vector<double>> logits;

  // CacheError if the claim is missing or the length is not C.
  const std::vector<double>& at(const std::string& claim_id, std::size_t C) const;
  std::vector<ClaimVector> rows(std::span<const CandidateSet> order) const;
  static TeacherLogitCache from_rows(std::span<const ClaimVector> rows, std::string checkpoint_hash = {});
};

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;  // claims
  std::uint64_t seed = 0;
  double data_fraction = 1.0;

  void validate() const;  // ConfigError
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, const TrainConfig& cfg);
  // p -= lr * m_hat / (sqrt(v_hat) + eps), bias-corrected moments.
  void step();
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

// One claim with token ids and candidate positions resolved.
struct EncodedClaim {
  std::string claim_id;
  std::vector<TokenId> claim;
  std::vector<std::size_t> docs;  // corpus positions, candidate order
  std::vector<int> labels;
};

struct EncodedData {
  std::vector<std::vector<TokenId>> doc_tokens;  // by corpus position
  std::vector<EncodedClaim> claims;
  std::vector<CandidateSet> sets;  // the source candidate sets, same order
};

// AlignmentError if a claim id or candidate doc is unknown.
EncodedData encode_data(std::span<const CandidateSet> sets, std::span<const Claim> claims, const Corpus& corpus,
                        const Vocabulary& vocab);

// Deterministic subset: ceil(fraction * n) claims picked by seeded shuffle,
// returned in their original order.
std::vector<std::size_t> select_fraction(std::size_t n, double fraction, std::uint64_t seed);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch loss
  std::optional<RankingReport> dev;
};

struct TrainResult {
  std::vector<Parameter> best_params;
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
};

// Non-finite loss aborts training. last_finite holds the parameters before
// the offending update.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, std::vector<Parameter> last_finite)
      : DivergenceError(what), last_finite_(std::move(last_finite)) {}
  const std::vector<Parameter>& last_finite() const noexcept { return last_finite_; }

 private:
  std::vector<Parameter> last_finite_;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batches of claims, Adam updates on the mean per-claim combined loss,
// dev report after each epoch. The model ends up holding the parameters of
// the epoch with the best dev recall_micro(3) (earliest on ties; the last
// epoch when dev is empty).
TrainResult train_student(StudentModel& model, const EncodedData& train, const EncodedData* dev,
                          const LossConfig& loss, const TrainConfig& cfg, const TeacherLogitCache* cache,
                          const EpochCallback& on_epoch = {});

// Same loop on the hard loss only.
TrainResult train_teacher(TeacherModel& model, const EncodedData& train, const EncodedData* dev,
                          const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Student logits for every claim, in claim order.
std::vector<ClaimVector> score_student(const StudentModel& model, const EncodedData& data);
// One teacher logit per candidate per claim.
TeacherLogitCache score_teacher(const TeacherModel& model, const EncodedData& data, std::string checkpoint_hash = {});

nlohmann::json loss_config_json(const LossConfig& c);
nlohmann::json train_config_json(const TrainConfig& c);

}  // namespace kdret
