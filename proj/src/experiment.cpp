#include "kdret/experiment.hpp"

#include <chrono>
#include <cstdio>

namespace kdret {

using nlohmann::json;

DatasetBundle build_bundle(std::vector<Document> docs, std::span<const Claim> claims, std::size_t C,
                           std::uint64_t split_seed, std::size_t mine_depth) {
  DatasetBundle b;
  b.corpus = Corpus(std::move(docs));
  validate_claims(claims, b.corpus);
  b.index = TfidfIndex::build(b.corpus);
  b.C = C;
  b.split = split_claims(claims, SplitSpec::reference_ratio(claims.size()), split_seed);
  b.train = assemble_dataset(b.split.train, b.corpus, b.index, C, mine_depth);
  b.dev = assemble_dataset(b.split.dev, b.corpus, b.index, C, mine_depth);
  b.test = assemble_dataset(b.split.test, b.corpus, b.index, C, mine_depth);
  std::vector<std::vector<std::string>> lists = b.corpus.all_tokens();
  for (const auto& c : b.split.train) lists.push_back(tokenize(c.text));
  b.vocab = Vocabulary::build(lists);
  return b;
}

namespace {

EncoderConfig toy_encoder(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.embed_dim = dim;
  c.hidden_dim = dim;
  c.seed = seed;
  return c;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

}  // namespace

ToyExperimentResult run_toy_experiment(const ToyExperimentConfig& cfg, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };

  ToyData toy = make_toy(cfg.toy);
  DatasetBundle b = build_bundle(std::move(toy.docs), toy.claims, cfg.C, cfg.split_seed);
  const EncodedData train = encode_data(b.train, b.split.train, b.corpus, b.vocab);
  const EncodedData dev = encode_data(b.dev, b.split.dev, b.corpus, b.vocab);

  ToyExperimentResult r;
  r.vocab_size = b.vocab.size();
  r.train_claims = train.claims.size();
  r.dev_claims = dev.claims.size();

  TeacherModel teacher(toy_encoder(b.vocab.size(), cfg.teacher_dim, cfg.teacher_train.seed));
  const TrainResult tr = train_teacher(teacher, train, &dev, cfg.teacher_train, [&](const EpochStats& s) {
    say(fmt("teacher epoch %.0f  loss %.4f  dev R3 %.2f", static_cast<double>(s.epoch), s.train_loss,
            s.dev->recall_micro3));
  });
  r.teacher_best_epoch = tr.best_epoch;
  r.teacher_dev = tr.history[tr.best_epoch - 1].dev.value();
  const TeacherLogitCache cache = score_teacher(teacher, train);

  for (std::uint64_t seed : cfg.seeds) {
    SeedOutcome o;
    o.seed = seed;
    TrainConfig tc = cfg.student_train;
    tc.seed = seed;
    auto run = [&](const LossConfig& loss) {
      StudentModel s(cfg.student, toy_encoder(b.vocab.size(), cfg.student_dim, seed));
      const TrainResult res = train_student(s, train, &dev, loss, tc, loss.alpha > 0.0 ? &cache : nullptr);
      return res.history[res.best_epoch - 1].dev.value();
    };
    o.baseline = run(LossConfig{.alpha = 0.0});
    say(fmt("seed %.0f  alpha 0  dev R3 %.2f", static_cast<double>(seed), o.baseline.recall_micro3));
    for (SoftLossType type : cfg.soft_losses)
      for (double alpha : cfg.alphas)
        for (double T : cfg.temperatures) {
          const LossConfig loss{.alpha = alpha, .temperature = T, .soft_loss = type};
          o.sweep.push_back({loss, run(loss)});
          say(std::string("seed ") + std::to_string(seed) + "  " + soft_loss_name(type) +
              fmt(" alpha %.1f T %.0f  dev R3 %.2f", alpha, T, o.sweep.back().dev.recall_micro3));
        }
    for (std::size_t i = 1; i < o.sweep.size(); ++i)
      if (o.sweep[i].dev.recall_micro3 > o.sweep[o.best].dev.recall_micro3) o.best = i;
    o.distilled_wins = !o.sweep.empty() && o.sweep[o.best].dev.recall_micro3 > o.baseline.recall_micro3;
    r.wins += o.distilled_wins;
    r.baseline_mean3 += o.baseline.recall_micro3;
    r.seeds.push_back(std::move(o));
  }
  if (!r.seeds.empty()) r.baseline_mean3 /= static_cast<double>(r.seeds.size());
  r.teacher_gap = r.teacher_dev.recall_micro3 - r.baseline_mean3;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

json toy_result_json(const ToyExperimentResult& r) {
  json seeds = json::array();
  for (const auto& o : r.seeds) {
    json sweep = json::array();
    for (const auto& p : o.sweep) sweep.push_back({{"loss", loss_config_json(p.loss)}, {"dev", report_json(p.dev)}});
    seeds.push_back({{"seed", o.seed},
                     {"baseline", report_json(o.baseline)},
                     {"best", o.sweep.empty() ? json() : json(o.best)},
                     {"distilled_wins", o.distilled_wins},
                     {"sweep", sweep}});
  }
  return {{"vocab_size", r.vocab_size},
          {"train_claims", r.train_claims},
          {"dev_claims", r.dev_claims},
          {"teacher_dev", report_json(r.teacher_dev)},
          {"teacher_best_epoch", r.teacher_best_epoch},
          {"baseline_mean_recall_micro3", r.baseline_mean3},
          {"teacher_gap", r.teacher_gap},
          {"wins", r.wins},
          {"seeds", seeds},
          {"seconds", r.seconds}};
}

}  // namespace kdret
