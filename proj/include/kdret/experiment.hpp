#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "kdret/corpus.hpp"
#include "kdret/distill.hpp"
#include "kdret/metrics.hpp"
#include "kdret/models.hpp"
#include "kdret/synthetic.hpp"
#include "kdret/text.hpp"
#include "kdret/tfidf.hpp"

namespace kdret {

// Everything derived from a corpus and a claim file: the TF-IDF index, the
// claim split, mined candidate sets per partition and the vocabulary (corpus
// plus training claims).
struct DatasetBundle {
  Corpus corpus;
  TfidfIndex index;
  ClaimSplit split;
  std::vector<CandidateSet> train, dev, test;
  Vocabulary vocab;
  std::size_t C = 0;
};

DatasetBundle build_bundle(std::vector<Document> docs, std::span<const Claim> claims, std::size_t C,
                           std::uint64_t split_seed, std::size_t mine_depth = 0);

struct ToyExperimentConfig {
  ToyConfig toy;
  std::size_t C = 10;
  std::uint64_t split_seed = 0;

  std::size_t teacher_dim = 32;
  TrainConfig teacher_train{.lr = 3e-3, .epochs = 20};
  StudentKind student = StudentKind::LSTM;
  std::size_t student_dim = 16;
  TrainConfig student_train{.lr = 1e-2, .epochs = 8};

  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> alphas{0.2, 0.5, 1.0};
  std::vector<double> temperatures{1.0, 3.0, 6.0};
  std::vector<SoftLossType> soft_losses{SoftLossType::CE, SoftLossType::MSE};
};

struct SweepPoint {
  LossConfig loss;
  RankingReport dev;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  RankingReport baseline;  // alpha = 0
  std::vector<SweepPoint> sweep;
  std::size_t best = 0;  // index into sweep, first maximum of dev recall_micro(3)
  bool distilled_wins = false;
};

struct ToyExperimentResult {
  std::size_t vocab_size = 0;
  std::size_t train_claims = 0, dev_claims = 0;
  RankingReport teacher_dev;
  std::size_t teacher_best_epoch = 0;
  std::vector<SeedOutcome> seeds;
  double baseline_mean3 = 0.0;  // mean over seeds of the alpha = 0 dev recall_micro(3)
  double teacher_gap = 0.0;     // teacher_dev.recall_micro3 - baseline_mean3
  std::size_t wins = 0;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

ToyExperimentResult run_toy_experiment(const ToyExperimentConfig& cfg, const ProgressFn& progress = {});

nlohmann::json toy_result_json(const ToyExperimentResult& r);

}  // namespace kdret
