#include "kdret/distill.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "kdret/parallel.hpp"
#include "kdret/rng.hpp"

namespace kdret {

using json = nlohmann::json;

const char* soft_loss_name(SoftLossType t) { return t == SoftLossType::CE ? "ce" : "mse"; }

SoftLossType parse_soft_loss(const std::string& s) {
  if (s == "ce") return SoftLossType::CE;
  if (s == "mse") return SoftLossType::MSE;
  throw ConfigError("unknown soft loss '" + s + "' (expected ce or mse)");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 0");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
}

std::vector<double> temperature_softmax(std::span<const double> logits, double T) {
  if (!(T >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (logits.empty()) throw ShapeError("temperature_softmax: empty logits");
  for (double x : logits)
    if (!std::isfinite(x)) throw NumericsError("temperature_softmax: non-finite logit");
  const std::size_t arg = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  std::vector<double> out(logits.size(), 0.0);
  if (T == 0.0) {
    out[arg] = 1.0;
    return out;
  }
  const double m = logits[arg];
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp((logits[i] - m) / T);
  for (double& p : out) p /= z;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void require_logits(Var student, std::size_t C, const char* what) {
  if (student.shape() != Shape{1, C})
    throw ShapeError(std::string(what) + ": expected student logits [1," + std::to_string(C) + "], got " +
                     shape_str(student.shape()));
}

Var neg_dot(Var a, std::vector<double> target) {
  Tape& t = *a.tape();
  const std::size_t C = target.size();
  return ag::scale(ag::sum(ag::mul(t.constant(Tensor({1, C}, std::move(target))), a)), -1.0);
}

Tape& scratch_tape() {
  thread_local Tape tape(Tape::Mode::Inference);
  tape.reset();
  return tape;
}

Var logits_var(Tape& t, std::span<const double> s) {
  return t.constant(Tensor({1, s.size()}, std::vector<double>(s.begin(), s.end())));
}

}  // namespace

Var soft_loss_var(Var student, std::span<const double> teacher, double T, SoftLossType type) {
  require_logits(student, teacher.size(), "soft loss");
  std::vector<double> target = temperature_softmax(teacher, T);
  const double Ts = T == 0.0 ? 1.0 : T;
  Var z = Ts == 1.0 ? student : ag::scale(student, 1.0 / Ts);
  if (type == SoftLossType::CE) return neg_dot(ag::log_softmax_rows(z), std::move(target));
  Tape& t = *student.tape();
  const std::size_t C = target.size();
  Var d = ag::sub(t.constant(Tensor({1, C}, std::move(target))), ag::softmax_rows(z));
  return ag::sum(ag::mul(d, d));
}

Var hard_loss_var(Var student, std::span<const int> labels) {
  require_logits(student, labels.size(), "hard loss");
  double c = 0.0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw LabelError("labels must be 0 or 1");
    c += y;
  }
  if (c == 0.0) throw LabelError("hard loss needs at least one positive label");
  std::vector<double> target(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) target[i] = labels[i] / c;
  return neg_dot(ag::log_softmax_rows(student), std::move(target));
}

Var combined_loss_var(const LossConfig& cfg, Var student, std::span<const int> labels,
                      const std::vector<double>* teacher) {
  cfg.validate();
  if (cfg.alpha == 0.0) return hard_loss_var(student, labels);
  if (teacher == nullptr) throw CacheError("alpha > 0 needs teacher logits");
  if (teacher->size() != labels.size())
    throw ShapeError("teacher logits and labels differ in length");
  Var soft = soft_loss_var(student, *teacher, cfg.temperature, cfg.soft_loss);
  if (cfg.alpha == 1.0) return soft;
  return ag::add(ag::scale(soft, cfg.alpha), ag::scale(hard_loss_var(student, labels), 1.0 - cfg.alpha));
}

double soft_loss_ce(std::span<const double> teacher, std::span<const double> student, double T) {
  if (teacher.size() != student.size()) throw ShapeError("soft loss: length mismatch");
  Tape& t = scratch_tape();
  return soft_loss_var(logits_var(t, student), teacher, T, SoftLossType::CE).value()[0];
}

double soft_loss_mse(std::span<const double> teacher, std::span<const double> student, double T) {
  if (teacher.size() != student.size()) throw ShapeError("soft loss: length mismatch");
  Tape& t = scratch_tape();
  return soft_loss_var(logits_var(t, student), teacher, T, SoftLossType::MSE).value()[0];
}

double hard_loss(std::span<const int> labels, std::span<const double> student) {
  if (labels.size() != student.size()) throw ShapeError("hard loss: length mismatch");
  Tape& t = scratch_tape();
  return hard_loss_var(logits_var(t, student), labels).value()[0];
}

double combined_loss(const LossConfig& cfg, std::span<const int> labels, const std::vector<double>* teacher,
                     std::span<const double> student) {
  if (labels.size() != student.size()) throw ShapeError("combined loss: length mismatch");
  Tape& t = scratch_tape();
  return combined_loss_var(cfg, logits_var(t, student), labels, teacher).value()[0];
}

// ---------------------------------------------------------------------------

const std::vector<double>& TeacherLogitCache::at(const std::string& claim_id, std::size_t C) const {
  auto it = logits.find(claim_id);
  if (it == logits.end()) throw CacheError("no teacher logits for claim '" + claim_id + "'");
  if (it->second.size() != C)
    throw CacheError("teacher logits for claim '" + claim_id + "' have length " + std::to_string(it->second.size()) +
                     ", expected " + std::to_string(C));
  return it->second;
}

std::vector<ClaimVector> TeacherLogitCache::rows(std::span<const CandidateSet> order) const {
  std::vector<ClaimVector> out;
  for (const auto& s : order) out.push_back({s.claim_id, at(s.claim_id, s.size())});
  return out;
}

TeacherLogitCache TeacherLogitCache::from_rows(std::span<const ClaimVector> rows, std::string checkpoint_hash) {
  TeacherLogitCache c;
  c.checkpoint_hash = std::move(checkpoint_hash);
  for (const auto& r : rows)
    if (!c.logits.emplace(r.claim_id, r.values).second)
      throw CacheError("duplicate teacher logits for claim '" + r.claim_id + "'");
  return c;
}

Adam::Adam(std::vector<Parameter*> params, const TrainConfig& cfg)
    : params_(std::move(params)), lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k]->value.data();
    auto g = params_[k]->grad.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

EncodedData encode_data(std::span<const CandidateSet> sets, std::span<const Claim> claims, const Corpus& corpus,
                        const Vocabulary& vocab) {
  std::unordered_map<std::string, const Claim*> by_id;
  for (const auto& c : claims) by_id[c.id] = &c;
  EncodedData out;
  out.doc_tokens.reserve(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) out.doc_tokens.push_back(vocab.encode(corpus.tokens(d)));
  for (const auto& s : sets) {
    auto it = by_id.find(s.claim_id);
    if (it == by_id.end()) throw AlignmentError("dataset claim '" + s.claim_id + "' is not in the claims file");
    EncodedClaim e;
    e.claim_id = s.claim_id;
    e.claim = vocab.encode(tokenize(it->second->text));
    for (const auto& id : s.candidates) e.docs.push_back(corpus.index_of(id));
    e.labels = s.labels;
    out.claims.push_back(std::move(e));
    out.sets.push_back(s);
  }
  return out;
}

std::vector<std::size_t> select_fraction(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (fraction == 1.0) return idx;
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  Rng rng(seed ^ 0x6a09e667f3bcc908ULL);
  rng.shuffle(idx);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------

namespace {

using BatchLogits = std::function<std::vector<Var>(Tape&, std::span<const EncodedClaim* const>)>;
using ClaimLoss = std::function<Var(Var, const EncodedClaim&)>;
using DevScores = std::function<std::vector<ClaimVector>(const EncodedData&)>;

bool grads_finite(ParamSet& ps) {
  for (const auto& p : ps.all())
    if (!p.grad.all_finite()) return false;
  return true;
}

TrainResult train_loop(ParamSet& ps, const EncodedData& train, const EncodedData* dev, const TrainConfig& cfg,
                       const BatchLogits& batch_logits, const ClaimLoss& claim_loss, const DevScores& dev_scores,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.claims.empty()) throw EmptyError("no training claims");
  std::vector<std::size_t> order = select_fraction(train.claims.size(), cfg.data_fraction, cfg.seed);
  Rng rng(cfg.seed);
  Adam adam(ps.pointers(), cfg);
  TrainResult result;
  result.best_params = ps.all();
  double best = -1.0;
  const bool has_dev = dev != nullptr && !dev->claims.empty();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const EncodedClaim*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train.claims[order[i]]);
      Tape tape;
      ps.zero_grad();
      double value = 0.0;
      try {
        const std::vector<Var> logits = batch_logits(tape, batch);
        Var total = claim_loss(logits[0], *batch[0]);
        for (std::size_t b = 1; b < batch.size(); ++b) total = ag::add(total, claim_loss(logits[b], *batch[b]));
        Var loss = ag::scale(total, 1.0 / static_cast<double>(batch.size()));
        value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericsError("non-finite loss");
        tape.backward(loss);
        if (!grads_finite(ps)) throw NumericsError("non-finite gradient");
      } catch (const NumericsError& e) {
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), ps.all());
      }
      adam.step();
      loss_sum += value;
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    if (has_dev) {
      const auto scores = dev_scores(*dev);
      stats.dev = evaluate(dev->sets, scores);
      if (stats.dev->recall_micro3 > best) {
        best = stats.dev->recall_micro3;
        result.best_params = ps.all();
        result.best_epoch = epoch;
      }
    } else {
      result.best_params = ps.all();
      result.best_epoch = epoch;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  assign_params(ps, result.best_params);
  return result;
}

Var row_of(std::span<const Var> scalars) { return ag::concat_cols(scalars); }

}  // namespace

TrainResult train_student(StudentModel& model, const EncodedData& train, const EncodedData* dev,
                          const LossConfig& loss, const TrainConfig& cfg, const TeacherLogitCache* cache,
                          const EpochCallback& on_epoch) {
  loss.validate();
  if (loss.alpha > 0.0) {
    if (cache == nullptr) throw CacheError("alpha > 0 needs a teacher logit cache");
    for (const auto& c : train.claims) cache->at(c.claim_id, c.docs.size());
  }
  auto batch_logits = [&](Tape& tape, std::span<const EncodedClaim* const> batch) {
    std::unordered_map<std::size_t, Var> docs;
    std::vector<Var> out;
    for (const EncodedClaim* c : batch) {
      Var q = model.encode_claim(tape, c->claim);
      std::vector<Var> s;
      for (std::size_t d : c->docs) {
        auto it = docs.find(d);
        if (it == docs.end()) it = docs.emplace(d, model.encode_document(tape, train.doc_tokens[d])).first;
        s.push_back(model.score(tape, q, it->second));
      }
      out.push_back(row_of(s));
    }
    return out;
  };
  auto claim_loss = [&](Var logits, const EncodedClaim& c) {
    const std::vector<double>* t = loss.alpha > 0.0 ? &cache->at(c.claim_id, c.docs.size()) : nullptr;
    return combined_loss_var(loss, logits, c.labels, t);
  };
  auto dev_scores = [&](const EncodedData& d) { return score_student(model, d); };
  return train_loop(model.params(), train, dev, cfg, batch_logits, claim_loss, dev_scores, on_epoch);
}

TrainResult train_teacher(TeacherModel& model, const EncodedData& train, const EncodedData* dev,
                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
  auto batch_logits = [&](Tape& tape, std::span<const EncodedClaim* const> batch) {
    std::vector<Var> out;
    for (const EncodedClaim* c : batch) {
      Var q = model.encode_claim(tape, c->claim);
      std::vector<Var> s;
      for (std::size_t d : c->docs) s.push_back(model.score_with(tape, q, train.doc_tokens[d]));
      out.push_back(row_of(s));
    }
    return out;
  };
  auto claim_loss = [](Var logits, const EncodedClaim& c) { return hard_loss_var(logits, c.labels); };
  auto dev_scores = [&](const EncodedData& d) { return score_teacher(model, d).rows(d.sets); };
  return train_loop(model.params(), train, dev, cfg, batch_logits, claim_loss, dev_scores, on_epoch);
}

std::vector<ClaimVector> score_student(const StudentModel& model, const EncodedData& data) {
  std::vector<std::size_t> needed;
  std::unordered_map<std::size_t, std::size_t> slot;
  for (const auto& c : data.claims)
    for (std::size_t d : c.docs)
      if (slot.emplace(d, needed.size()).second) needed.push_back(d);
  std::vector<Tensor> enc(needed.size());
  parallel_for(needed.size(), [&](std::size_t i) { enc[i] = model.encode_document(data.doc_tokens[needed[i]]); });
  std::vector<ClaimVector> out(data.claims.size());
  parallel_for(data.claims.size(), [&](std::size_t i) {
    const auto& c = data.claims[i];
    const Tensor q = model.encode_claim(c.claim);
    out[i].claim_id = c.claim_id;
    for (std::size_t d : c.docs) out[i].values.push_back(model.score(q, enc[slot.at(d)]));
  });
  return out;
}

TeacherLogitCache score_teacher(const TeacherModel& model, const EncodedData& data, std::string checkpoint_hash) {
  std::vector<std::vector<double>> logits(data.claims.size());
  parallel_for(data.claims.size(), [&](std::size_t i) {
    const auto& c = data.claims[i];
    for (std::size_t d : c.docs) logits[i].push_back(model.score(c.claim, data.doc_tokens[d]));
  });
  TeacherLogitCache cache;
  cache.checkpoint_hash = std::move(checkpoint_hash);
  for (std::size_t i = 0; i < data.claims.size(); ++i)
    if (!cache.logits.emplace(data.claims[i].claim_id, std::move(logits[i])).second)
      throw AlignmentError("claim '" + data.claims[i].claim_id + "' appears twice");
  return cache;
}

json loss_config_json(const LossConfig& c) {
  return {{"alpha", c.alpha}, {"temperature", c.temperature}, {"soft_loss", soft_loss_name(c.soft_loss)}};
}

json train_config_json(const TrainConfig& c) {
  return {{"lr", c.lr},       {"beta1", c.beta1},         {"beta2", c.beta2}, {"eps", c.eps},
          {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed}, {"data_fraction", c.data_fraction}};
}

}  // namespace kdret
