#include "kdret/index.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <numeric>

#include "kdret/errors.hpp"
#include "kdret/io.hpp"
#include "kdret/parallel.hpp"

namespace kdret {

static_assert(std::endian::native == std::endian::little, "index files are written in host byte order");

using nlohmann::json;

CostCounts CostLedger::counts() const noexcept {
  return {doc_.load(), claim_.load(), join_.load(), teacher_.load()};
}

void CostLedger::reset() noexcept {
  doc_ = 0;
  claim_ = 0;
  join_ = 0;
  teacher_ = 0;
}

json cost_json(const CostCounts& c) {
  return {{"doc_encoder", c.doc_encoder},
          {"claim_encoder", c.claim_encoder},
          {"join_head", c.join_head},
          {"teacher_joint", c.teacher_joint},
          {"encoder_calls", c.encoder_calls()}};
}

namespace {

constexpr char kMagic[8] = {'K', 'D', 'R', 'I', 'D', 'X', '0', '1'};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof v).data(), sizeof v);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (b_.size() - pos_ < n) throw FormatError("index file truncated");
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

void count(CostLedger* l, void (CostLedger::*f)(std::uint64_t) noexcept, std::uint64_t n = 1) {
  if (l) (l->*f)(n);
}

void check_vocab(const EncoderConfig& cfg, const Vocabulary& vocab) {
  if (cfg.vocab_size != vocab.size())
    throw VocabError("vocabulary has " + std::to_string(vocab.size()) + " entries but the model expects " +
                     std::to_string(cfg.vocab_size));
}

}  // namespace

std::string serialize_index(const DocIndex& index) {
  if (index.values.size() != index.ids.size() * index.dim) throw ShapeError("index values do not match count x dim");
  std::string out(kMagic, sizeof kMagic);
  put(out, static_cast<std::uint32_t>(index.checkpoint_hash.size()));
  out += index.checkpoint_hash;
  put(out, static_cast<std::uint64_t>(index.dim));
  put(out, static_cast<std::uint64_t>(index.ids.size()));
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    put(out, static_cast<std::uint32_t>(index.ids[i].size()));
    out += index.ids[i];
    out.append(reinterpret_cast<const char*>(index.row(i).data()), index.dim * sizeof(double));
  }
  return out;
}

DocIndex parse_index(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(r.take(sizeof kMagic).data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not an index file (bad magic)");
  DocIndex index;
  index.checkpoint_hash = std::string(r.take(r.get<std::uint32_t>()));
  index.dim = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  if (index.dim != 0 && n > bytes.size() / (index.dim * sizeof(double))) throw FormatError("index file truncated");
  index.values.resize(n * index.dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    index.ids.emplace_back(r.take(r.get<std::uint32_t>()));
    std::memcpy(index.values.data() + i * index.dim, r.take(index.dim * sizeof(double)).data(),
                index.dim * sizeof(double));
  }
  if (!r.done()) throw FormatError("trailing bytes after index");
  return index;
}

void save_index(const std::filesystem::path& path, const DocIndex& index) { write_file(path, serialize_index(index)); }

DocIndex load_index(const std::filesystem::path& path) { return parse_index(read_file(path)); }

std::string checkpoint_hash(const Checkpoint& ckpt) { return hex64(fnv1a64(serialize_checkpoint(ckpt))); }

DocIndex build_index(const StudentModel& model, const Vocabulary& vocab, const Corpus& corpus, std::string hash,
                     CostLedger* ledger) {
  check_vocab(model.config(), vocab);
  DocIndex index;
  index.checkpoint_hash = std::move(hash);
  index.dim = model.config().hidden_dim;
  index.values.resize(corpus.size() * index.dim);
  for (const auto& d : corpus.docs()) index.ids.push_back(d.id);
  parallel_for(corpus.size(), [&](std::size_t i) {
    const Tensor e = model.encode_document(vocab.encode(corpus.tokens(i)));
    count(ledger, &CostLedger::add_doc_encoder);
    std::copy(e.data().begin(), e.data().end(), index.values.begin() + static_cast<std::ptrdiff_t>(i * index.dim));
  });
  return index;
}

DocIndex build_index(const Checkpoint& ckpt, const Corpus& corpus, CostLedger* ledger) {
  return build_index(student_from_checkpoint(ckpt), ckpt.vocab, corpus, checkpoint_hash(ckpt), ledger);
}

namespace {

std::vector<double> score_claim(const StudentModel& model, const Vocabulary& vocab, const DocIndex& index,
                                std::string_view claim_text, CostLedger* ledger) {
  if (index.dim != model.config().hidden_dim)
    throw ShapeError("index dimension " + std::to_string(index.dim) + " does not match the model's " +
                     std::to_string(model.config().hidden_dim));
  const Tensor q = model.encode_claim(vocab.encode(tokenize(claim_text)));
  count(ledger, &CostLedger::add_claim_encoder);
  std::vector<double> scores(index.size());
  Tensor d({1, index.dim});
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy(index.row(i).begin(), index.row(i).end(), d.data().begin());
    scores[i] = model.score(q, d);
  }
  count(ledger, &CostLedger::add_join_head, index.size());
  return scores;
}

}  // namespace

std::vector<Hit> retrieve(const StudentModel& model, const Vocabulary& vocab, const DocIndex& index,
                          std::string_view claim_text, std::size_t k, CostLedger* ledger) {
  if (index.empty()) throw EmptyIndexError("cannot retrieve from an empty index");
  if (k == 0 || k > index.size())
    throw ConfigError("k must lie in [1, " + std::to_string(index.size()) + "], got " + std::to_string(k));
  check_vocab(model.config(), vocab);
  const auto scores = score_claim(model, vocab, index, claim_text, ledger);
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return index.ids[a] < index.ids[b];
                    });
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < k; ++i) hits.push_back({index.ids[order[i]], scores[order[i]]});
  return hits;
}

std::vector<std::vector<double>> student_score_all(const StudentModel& model, const Vocabulary& vocab,
                                                   const DocIndex& index, std::span<const Claim> claims,
                                                   CostLedger* ledger) {
  check_vocab(model.config(), vocab);
  std::vector<std::vector<double>> out(claims.size());
  parallel_for(claims.size(), [&](std::size_t n) { out[n] = score_claim(model, vocab, index, claims[n].text, ledger); });
  return out;
}

std::vector<std::vector<double>> teacher_score_all(const TeacherModel& model, const Vocabulary& vocab,
                                                   const Corpus& corpus, std::span<const Claim> claims,
                                                   CostLedger* ledger) {
  check_vocab(model.config(), vocab);
  std::vector<std::vector<TokenId>> docs;
  for (std::size_t d = 0; d < corpus.size(); ++d) docs.push_back(vocab.encode(corpus.tokens(d)));
  std::vector<std::vector<double>> out(claims.size());
  parallel_for(claims.size(), [&](std::size_t n) {
    const auto claim = vocab.encode(tokenize(claims[n].text));
    for (const auto& d : docs) {
      out[n].push_back(model.score(claim, d));
      count(ledger, &CostLedger::add_teacher_joint);
    }
  });
  return out;
}

BenchmarkReport benchmark(const StudentModel& student, const Vocabulary& student_vocab, const TeacherModel& teacher,
                          const Vocabulary& teacher_vocab, const Corpus& corpus, std::span<const Claim> claims) {
  using clock = std::chrono::steady_clock;
  BenchmarkReport r;
  r.N = claims.size();
  r.D = corpus.size();

  CostLedger s;
  auto t0 = clock::now();
  const DocIndex index = build_index(student, student_vocab, corpus, {}, &s);
  student_score_all(student, student_vocab, index, claims, &s);
  r.student_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.student = s.counts();

  CostLedger t;
  t0 = clock::now();
  teacher_score_all(teacher, teacher_vocab, corpus, claims, &t);
  r.teacher_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.teacher = t.counts();

  r.speedup = r.student_seconds > 0.0 ? r.teacher_seconds / r.student_seconds : 0.0;
  return r;
}

json benchmark_json(const BenchmarkReport& r) {
  return {{"N", r.N},
          {"D", r.D},
          {"student", cost_json(r.student)},
          {"teacher", cost_json(r.teacher)},
          {"student_seconds", r.student_seconds},
          {"teacher_seconds", r.teacher_seconds},
          {"speedup", r.speedup}};
}

}  // namespace kdret
