#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kdret/autograd.hpp"
#include "kdret/text.hpp"

namespace kdret {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  std::vector<std::size_t> kernel_widths{2, 3, 4};
  std::size_t filters = 32;  // per kernel width
  std::size_t max_claim_len = 32;
  std::size_t max_doc_len = 256;
  std::uint64_t seed = 0;

  // ConfigError on non-positive dims or a kernel wider than max_doc_len.
  void validate() const;
};

// Ordered list of named parameters. Storage never reallocates after
// construction, so pointers handed out stay valid.
class ParamSet {
 public:
  std::size_t add(std::string name, Shape shape);
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const noexcept { return params_.size(); }
  std::vector<Parameter>& all() noexcept { return params_; }
  const std::vector<Parameter>& all() const noexcept { return params_; }
  std::vector<Parameter*> pointers();
  std::size_t count() const;
  void zero_grad();

  // Weights uniform(-0.1, 0.1) in insertion order; parameters whose name ends
  // in ".b" stay zero.
  void init_uniform(std::uint64_t seed);

 private:
  std::vector<Parameter> params_;
};

// Weights of one LSTM layer, gate order input, forget, candidate, output.
struct LstmLayer {
  std::size_t w_ih = 0;  // [in, 4H]
  std::size_t w_hh = 0;  // [H, 4H]
  std::size_t b = 0;     // [1, 4H]
  std::size_t hidden = 0;

  static LstmLayer declare(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden);
  // Packed [h ; c] states after each step, starting from zero state.
  std::vector<Var> steps(Tape& tape, ParamSet& ps, Var x) const;
  // x [T, in] -> hidden states [T, H].
  Var run(Tape& tape, ParamSet& ps, Var x) const;
};

enum class StudentKind { CNN, LSTM };
const char* student_kind_name(StudentKind k);
StudentKind parse_student_kind(const std::string& s);

// Claim-independent dual encoder. Claims and documents go through the same
// embedding and encoder; a linear head scores [c ; d ; c*d].
class StudentModel {
 public:
  StudentModel(StudentKind kind, EncoderConfig config);

  StudentKind kind() const noexcept { return kind_; }
  const EncoderConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  std::size_t count_params() const { return params_.count(); }
  std::size_t dim() const noexcept { return config_.hidden_dim; }

  // Tokens are truncated to the configured max length; an empty list becomes
  // a single PAD and the CNN pads short inputs with PAD up to its widest
  // kernel. Output is [1, hidden_dim]. VocabError for ids outside the vocab.
  Var encode_document(Tape& tape, std::span<const TokenId> doc);
  Var encode_claim(Tape& tape, std::span<const TokenId> claim);
  // ShapeError unless both encodings are [1, hidden_dim].
  Var score(Tape& tape, Var claim_enc, Var doc_enc);

  Tensor encode_document(std::span<const TokenId> doc) const;
  Tensor encode_claim(std::span<const TokenId> claim) const;
  double score(const Tensor& claim_enc, const Tensor& doc_enc) const;

  // Index of the join weight [3H, 1] and bias [1, 1] in params().
  std::size_t join_w() const noexcept { return join_w_; }
  std::size_t join_b() const noexcept { return join_b_; }

 private:
  Var encode(Tape& tape, std::span<const TokenId> ids, std::size_t max_len);

  StudentKind kind_;
  EncoderConfig config_;
  ParamSet params_;
  std::size_t embedding_ = 0;
  LstmLayer lstm_;
  std::vector<std::size_t> conv_w_, conv_b_;
  std::size_t proj_w_ = 0, proj_b_ = 0;
  std::size_t join_w_ = 0, join_b_ = 0;
};

// Pair scorer with coattention between the claim and the document.
//
// One LSTM encodes both sides; the claim side gets an extra projection.
//
//   Q = tanh(LSTM(E[claim]) W + b)  [n, H]
//   D = LSTM(E[doc])                [m, H]
//   L = D Q^T                       [m, n]
//   A_D = softmax_rows(L)           doc tokens over claim tokens
//   A_Q = softmax_rows(L^T)         claim tokens over doc tokens
//   C_Q = A_Q D                     [n, H]
//   C_D = A_D [Q ; C_Q]             [m, 2H]
//   U = LSTM_u([D ; C_D])           [m, H]
//   t = mean_rows(U) w + b
class TeacherModel {
 public:
  explicit TeacherModel(EncoderConfig config);

  const EncoderConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  std::size_t count_params() const { return params_.count(); }

  Var score(Tape& tape, std::span<const TokenId> claim, std::span<const TokenId> doc);
  double score(std::span<const TokenId> claim, std::span<const TokenId> doc) const;

  // The claim-side states Q depend only on the claim, so one encoding can be
  // paired with several documents. score() is score_with(encode_claim(..)).
  Var encode_claim(Tape& tape, std::span<const TokenId> claim);
  Var score_with(Tape& tape, Var Q, std::span<const TokenId> doc);

  // Intermediate Q, D and L for one pair, inference only.
  struct Trace {
    Tensor Q, D, L;
  };
  Trace trace(std::span<const TokenId> claim, std::span<const TokenId> doc) const;

 private:
  Var encode_doc(Tape& tape, std::span<const TokenId> doc);

  EncoderConfig config_;
  ParamSet params_;
  std::size_t embedding_ = 0;
  LstmLayer encoder_, fusion_lstm_;
  std::size_t claim_proj_w_ = 0, claim_proj_b_ = 0;
  std::size_t head_w_ = 0, head_b_ = 0;
};

// Default sizes: the student uses EncoderConfig defaults, the teacher a wider
// hidden layer.
EncoderConfig default_student_config(std::size_t vocab_size, std::uint64_t seed = 0);
EncoderConfig default_teacher_config(std::size_t vocab_size, std::uint64_t seed = 0);

// Checkpoint file layout (little-endian):
//   8 bytes   magic "KDRCKPT1"
//   u32       header length n
//   n bytes   JSON header {"model", "config", "vocab", "params": [{"name", "shape"}]}
//   f64[]     parameter values in header order
struct Checkpoint {
  std::string model;  // "student-cnn", "student-lstm" or "teacher"
  EncoderConfig config;
  Vocabulary vocab;
  std::vector<Parameter> params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const StudentModel& m, const Vocabulary& vocab);
Checkpoint make_checkpoint(const TeacherModel& m, const Vocabulary& vocab);
// FormatError if the checkpoint holds a different model or shapes disagree.
StudentModel student_from_checkpoint(const Checkpoint& ckpt);
TeacherModel teacher_from_checkpoint(const Checkpoint& ckpt);
// Copy values from `src` into `dst` by position; FormatError on mismatch.
void assign_params(ParamSet& dst, std::span<const Parameter> src);

}  // namespace kdret
