#include "kdret/models.hpp"

#include <bit>
#include <cstring>
#include <json.hpp>

#include "kdret/errors.hpp"
#include "kdret/io.hpp"
#include "kdret/rng.hpp"

namespace kdret {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using json = nlohmann::json;

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(embed_dim, "embed_dim");
  positive(hidden_dim, "hidden_dim");
  positive(filters, "filters");
  positive(max_claim_len, "max_claim_len");
  positive(max_doc_len, "max_doc_len");
  if (kernel_widths.empty()) throw ConfigError("kernel_widths is empty");
  for (std::size_t w : kernel_widths) {
    positive(w, "kernel width");
    if (w > max_doc_len) throw ConfigError("kernel width " + std::to_string(w) + " exceeds max_doc_len");
  }
}

// ---------------------------------------------------------------------------

std::size_t ParamSet::add(std::string name, Shape shape) {
  params_.emplace_back(std::move(name), Tensor(std::move(shape)));
  return params_.size() - 1;
}

std::vector<Parameter*> ParamSet::pointers() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParamSet::init_uniform(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : params_) {
    const bool bias = p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0;
    for (double& v : p.value.data()) v = bias ? 0.0 : rng.uniform(-0.1, 0.1);
  }
}

LstmLayer LstmLayer::declare(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden) {
  LstmLayer l;
  l.hidden = hidden;
  l.w_ih = ps.add(prefix + ".w_ih", {in, 4 * hidden});
  l.w_hh = ps.add(prefix + ".w_hh", {hidden, 4 * hidden});
  l.b = ps.add(prefix + ".b", {1, 4 * hidden});
  return l;
}

std::vector<Var> LstmLayer::steps(Tape& tape, ParamSet& ps, Var x) const {
  Var gates = ag::affine(x, tape.param(ps[w_ih]), tape.param(ps[b]));
  Var w = tape.param(ps[w_hh]);
  Var state = tape.constant(Tensor({1, 2 * hidden}));
  std::vector<Var> states;
  states.reserve(x.shape()[0]);
  for (std::size_t t = 0; t < x.shape()[0]; ++t) {
    state = ag::lstm_cell(gates, t, state, w);
    states.push_back(state);
  }
  return states;
}

Var LstmLayer::run(Tape& tape, ParamSet& ps, Var x) const { return ag::stack_rows(steps(tape, ps, x), 0, hidden); }

const char* student_kind_name(StudentKind k) { return k == StudentKind::CNN ? "cnn" : "lstm"; }

StudentKind parse_student_kind(const std::string& s) {
  if (s == "cnn") return StudentKind::CNN;
  if (s == "lstm") return StudentKind::LSTM;
  throw ConfigError("unknown student '" + s + "' (expected cnn or lstm)");
}

namespace {

std::vector<TokenId> prepare(std::span<const TokenId> ids, std::size_t max_len, std::size_t min_len) {
  std::vector<TokenId> out(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), max_len)));
  if (out.size() < std::max<std::size_t>(min_len, 1)) out.resize(std::max<std::size_t>(min_len, 1), Vocabulary::kPad);
  return out;
}

Tape& inference_tape() {
  thread_local Tape tape(Tape::Mode::Inference);
  tape.reset();
  return tape;
}

}  // namespace

// ---------------------------------------------------------------------------

StudentModel::StudentModel(StudentKind kind, EncoderConfig config) : kind_(kind), config_(std::move(config)) {
  config_.validate();
  const std::size_t E = config_.embed_dim, H = config_.hidden_dim;
  embedding_ = params_.add("embedding", {config_.vocab_size, E});
  if (kind_ == StudentKind::LSTM) {
    lstm_ = LstmLayer::declare(params_, "lstm", E, H);
  } else {
    for (std::size_t w : config_.kernel_widths) {
      conv_w_.push_back(params_.add("conv" + std::to_string(w) + ".w", {config_.filters, w, E}));
      conv_b_.push_back(params_.add("conv" + std::to_string(w) + ".b", {1, config_.filters}));
    }
    proj_w_ = params_.add("proj.w", {config_.filters * config_.kernel_widths.size(), H});
    proj_b_ = params_.add("proj.b", {1, H});
  }
  join_w_ = params_.add("join.w", {3 * H, 1});
  join_b_ = params_.add("join.b", {1, 1});
  params_.init_uniform(config_.seed);
}

Var StudentModel::encode(Tape& tape, std::span<const TokenId> ids, std::size_t max_len) {
  std::size_t min_len = 1;
  if (kind_ == StudentKind::CNN)
    min_len = *std::max_element(config_.kernel_widths.begin(), config_.kernel_widths.end());
  const std::vector<TokenId> tokens = prepare(ids, std::max(max_len, min_len), min_len);
  Var x = ag::gather_rows(tape.param(params_[embedding_]), tokens);
  if (kind_ == StudentKind::LSTM) {
    return ag::slice_cols(lstm_.steps(tape, params_, x).back(), 0, lstm_.hidden);
  }
  std::vector<Var> pooled;
  for (std::size_t k = 0; k < conv_w_.size(); ++k) {
    Var c = ag::conv1d(x, tape.param(params_[conv_w_[k]]), tape.param(params_[conv_b_[k]]));
    pooled.push_back(ag::max_over_time(c));
  }
  return ag::tanh(ag::affine(ag::concat_cols(pooled), tape.param(params_[proj_w_]), tape.param(params_[proj_b_])));
}

Var StudentModel::encode_document(Tape& tape, std::span<const TokenId> doc) {
  return encode(tape, doc, config_.max_doc_len);
}

Var StudentModel::encode_claim(Tape& tape, std::span<const TokenId> claim) {
  return encode(tape, claim, config_.max_claim_len);
}

Var StudentModel::score(Tape& tape, Var claim_enc, Var doc_enc) {
  const Shape want{1, config_.hidden_dim};
  if (claim_enc.shape() != want || doc_enc.shape() != want)
    throw ShapeError("student score: expected encodings " + shape_str(want) + ", got " +
                     shape_str(claim_enc.shape()) + " and " + shape_str(doc_enc.shape()));
  Var joined = ag::concat_cols({claim_enc, doc_enc, ag::mul(claim_enc, doc_enc)});
  return ag::affine(joined, tape.param(params_[join_w_]), tape.param(params_[join_b_]));
}

Tensor StudentModel::encode_document(std::span<const TokenId> doc) const {
  Tape& t = inference_tape();
  return const_cast<StudentModel*>(this)->encode_document(t, doc).value();
}

Tensor StudentModel::encode_claim(std::span<const TokenId> claim) const {
  Tape& t = inference_tape();
  return const_cast<StudentModel*>(this)->encode_claim(t, claim).value();
}

double StudentModel::score(const Tensor& claim_enc, const Tensor& doc_enc) const {
  Tape& t = inference_tape();
  return const_cast<StudentModel*>(this)->score(t, t.constant(claim_enc), t.constant(doc_enc)).value()[0];
}

// ---------------------------------------------------------------------------

TeacherModel::TeacherModel(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t E = config_.embed_dim, H = config_.hidden_dim;
  embedding_ = params_.add("embedding", {config_.vocab_size, E});
  encoder_ = LstmLayer::declare(params_, "encoder", E, H);
  claim_proj_w_ = params_.add("claim_proj.w", {H, H});
  claim_proj_b_ = params_.add("claim_proj.b", {1, H});
  fusion_lstm_ = LstmLayer::declare(params_, "fusion_lstm", 3 * H, H);
  head_w_ = params_.add("head.w", {H, 1});
  head_b_ = params_.add("head.b", {1, 1});
  params_.init_uniform(config_.seed);
}

Var TeacherModel::encode_claim(Tape& tape, std::span<const TokenId> claim) {
  const auto ids = prepare(claim, config_.max_claim_len, 1);
  Var Q = encoder_.run(tape, params_, ag::gather_rows(tape.param(params_[embedding_]), ids));
  return ag::tanh(ag::affine(Q, tape.param(params_[claim_proj_w_]), tape.param(params_[claim_proj_b_])));
}

Var TeacherModel::encode_doc(Tape& tape, std::span<const TokenId> doc) {
  const auto ids = prepare(doc, config_.max_doc_len, 1);
  return encoder_.run(tape, params_, ag::gather_rows(tape.param(params_[embedding_]), ids));
}

Var TeacherModel::score_with(Tape& tape, Var Q, std::span<const TokenId> doc) {
  Var D = encode_doc(tape, doc);
  Var L = ag::matmul(D, ag::transpose(Q));
  Var A_D = ag::softmax_rows(L);
  Var A_Q = ag::softmax_rows(ag::transpose(L));
  Var C_Q = ag::matmul(A_Q, D);
  Var C_D = ag::matmul(A_D, ag::concat_cols({Q, C_Q}));
  Var U = fusion_lstm_.run(tape, params_, ag::concat_cols({D, C_D}));
  return ag::affine(ag::mean_rows(U), tape.param(params_[head_w_]), tape.param(params_[head_b_]));
}

Var TeacherModel::score(Tape& tape, std::span<const TokenId> claim, std::span<const TokenId> doc) {
  return score_with(tape, encode_claim(tape, claim), doc);
}

double TeacherModel::score(std::span<const TokenId> claim, std::span<const TokenId> doc) const {
  Tape& t = inference_tape();
  return const_cast<TeacherModel*>(this)->score(t, claim, doc).value()[0];
}

TeacherModel::Trace TeacherModel::trace(std::span<const TokenId> claim, std::span<const TokenId> doc) const {
  Tape& t = inference_tape();
  auto* self = const_cast<TeacherModel*>(this);
  Var Q = self->encode_claim(t, claim);
  Var D = self->encode_doc(t, doc);
  Var L = ag::matmul(D, ag::transpose(Q));
  return {Q.value(), D.value(), L.value()};
}

EncoderConfig default_student_config(std::size_t vocab_size, std::uint64_t seed) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.seed = seed;
  return c;
}

EncoderConfig default_teacher_config(std::size_t vocab_size, std::uint64_t seed) {
  EncoderConfig c = default_student_config(vocab_size, seed);
  c.hidden_dim = 192;
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[8] = {'K', 'D', 'R', 'C', 'K', 'P', 'T', '1'};

json config_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},         {"hidden_dim", c.hidden_dim},
          {"kernel_widths", c.kernel_widths}, {"filters", c.filters},       {"max_claim_len", c.max_claim_len},
          {"max_doc_len", c.max_doc_len},     {"seed", c.seed}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.kernel_widths = j.at("kernel_widths").get<std::vector<std::size_t>>();
  c.filters = j.at("filters").get<std::size_t>();
  c.max_claim_len = j.at("max_claim_len").get<std::size_t>();
  c.max_doc_len = j.at("max_doc_len").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json header = {{"model", ckpt.model}, {"config", config_json(ckpt.config)}, {"vocab", ckpt.vocab.tokens()}};
  json params = json::array();
  for (const auto& p : ckpt.params) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["params"] = params;
  const std::string h = header.dump();
  std::string out(kCkptMagic, sizeof kCkptMagic);
  const auto len = static_cast<std::uint32_t>(h.size());
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += h;
  for (const auto& p : ckpt.params)
    out.append(reinterpret_cast<const char*>(p.value.data().data()), p.value.size() * sizeof(double));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
    throw FormatError("not a checkpoint file (bad magic)");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw FormatError("checkpoint header truncated");
  Checkpoint ckpt;
  std::size_t pos = 12 + len;
  try {
    const json header = json::parse(bytes.substr(12, len));
    ckpt.model = header.at("model").get<std::string>();
    ckpt.config = config_from_json(header.at("config"));
    ckpt.vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    for (const auto& p : header.at("params")) {
      Tensor t(p.at("shape").get<Shape>());
      const std::size_t n = t.size() * sizeof(double);
      if (bytes.size() < pos + n) throw FormatError("checkpoint values truncated");
      std::memcpy(t.data().data(), bytes.data() + pos, n);
      pos += n;
      ckpt.params.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint values");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

Checkpoint make_checkpoint(const StudentModel& m, const Vocabulary& vocab) {
  return {std::string("student-") + student_kind_name(m.kind()), m.config(), vocab, m.params().all()};
}

Checkpoint make_checkpoint(const TeacherModel& m, const Vocabulary& vocab) {
  return {"teacher", m.config(), vocab, m.params().all()};
}

void assign_params(ParamSet& dst, std::span<const Parameter> src) {
  if (dst.size() != src.size())
    throw FormatError("parameter count mismatch: " + std::to_string(dst.size()) + " vs " + std::to_string(src.size()));
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].value.shape() != src[i].value.shape())
      throw FormatError("parameter '" + src[i].name + "' does not match '" + dst[i].name + "'");
    dst[i].value = src[i].value;
  }
}

StudentModel student_from_checkpoint(const Checkpoint& ckpt) {
  StudentKind kind;
  if (ckpt.model == "student-cnn")
    kind = StudentKind::CNN;
  else if (ckpt.model == "student-lstm")
    kind = StudentKind::LSTM;
  else
    throw FormatError("checkpoint holds a '" + ckpt.model + "', expected a student");
  StudentModel m(kind, ckpt.config);
  assign_params(m.params(), ckpt.params);
  return m;
}

TeacherModel teacher_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.model != "teacher") throw FormatError("checkpoint holds a '" + ckpt.model + "', expected a teacher");
  TeacherModel m(ckpt.config);
  assign_params(m.params(), ckpt.params);
  return m;
}

}  // namespace kdret
