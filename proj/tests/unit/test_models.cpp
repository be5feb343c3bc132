#include <doctest.h>

#include <cmath>

#include "kdret/errors.hpp"
#include "kdret/models.hpp"
#include "kdret/rng.hpp"

using namespace kdret;

namespace {

EncoderConfig tiny(std::uint64_t seed, std::size_t vocab = 12) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 3;
  c.hidden_dim = 3;
  c.kernel_widths = {1, 2};
  c.filters = 2;
  c.max_claim_len = 8;
  c.max_doc_len = 8;
  c.seed = seed;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(rng.below(vocab)));
  return ids;
}

std::size_t affine_count(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t lstm_count(std::size_t in, std::size_t h) { return in * 4 * h + h * 4 * h + 4 * h; }

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("init is deterministic and seed dependent") {
  StudentModel a(StudentKind::LSTM, tiny(1)), b(StudentKind::LSTM, tiny(1)), c(StudentKind::LSTM, tiny(2));
  bool differ = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value == b.params()[i].value);
    differ = differ || !(a.params()[i].value == c.params()[i].value);
  }
  CHECK(differ);
  TeacherModel t1(tiny(5)), t2(tiny(5));
  for (std::size_t i = 0; i < t1.params().size(); ++i) CHECK(t1.params()[i].value == t2.params()[i].value);
}

TEST_CASE("embedding table is the first draws of the generator") {
  EncoderConfig c = tiny(0, 10);
  c.embed_dim = 4;
  StudentModel m(StudentKind::CNN, c);
  Rng rng(0);
  const Tensor& e = m.params()[0].value;
  REQUIRE(e.shape() == Shape{10, 4});
  for (std::size_t i = 0; i < 40; ++i) CHECK(e[i] == rng.uniform(-0.1, 0.1));
}

TEST_CASE("biases start at zero") {
  TeacherModel t(tiny(3));
  for (const auto& p : t.params().all())
    if (p.name.ends_with(".b"))
      for (double v : p.value.data()) CHECK(v == 0.0);
}

TEST_CASE("parameter counts follow per-layer formulas") {
  const std::size_t V = 500;
  const EncoderConfig s = default_student_config(V), t = default_teacher_config(V);
  const std::size_t E = s.embed_dim, H = s.hidden_dim, F = s.filters;
  const std::size_t join = affine_count(3 * H, 1);

  StudentModel lstm(StudentKind::LSTM, s);
  CHECK(lstm.count_params() == V * E + lstm_count(E, H) + join);

  std::size_t conv = 0;
  for (std::size_t w : s.kernel_widths) conv += F * w * E + F;
  StudentModel cnn(StudentKind::CNN, s);
  CHECK(cnn.count_params() == V * E + conv + affine_count(F * s.kernel_widths.size(), H) + join);

  const std::size_t Ht = t.hidden_dim;
  TeacherModel teacher(t);
  CHECK(teacher.count_params() ==
        V * t.embed_dim + lstm_count(t.embed_dim, Ht) + affine_count(Ht, Ht) + lstm_count(3 * Ht, Ht) +
            affine_count(Ht, 1));

  CHECK(affine_count(7, 3) == 24);
  const double ratio_lstm = double(teacher.count_params()) / double(lstm.count_params());
  const double ratio_cnn = double(teacher.count_params()) / double(cnn.count_params());
  CHECK(ratio_lstm >= 10.0);
  CHECK(ratio_cnn >= 10.0);
}

TEST_CASE("student encodings are deterministic and finite") {
  for (StudentKind kind : {StudentKind::CNN, StudentKind::LSTM}) {
    StudentModel m(kind, tiny(4));
    const std::vector<TokenId> doc{3, 4, 5, 6};
    CHECK(m.encode_document(doc) == m.encode_document(doc));
    const std::vector<TokenId> pads(5, Vocabulary::kPad);
    CHECK(m.encode_document(pads).all_finite());
    CHECK(m.encode_document(std::vector<TokenId>{}).all_finite());
    CHECK(m.encode_document(doc).shape() == Shape{1, 3});
    CHECK_THROWS_AS(m.encode_document(std::vector<TokenId>{3, 12}), VocabError);
    CHECK_THROWS_AS(m.encode_claim(std::vector<TokenId>{-1}), VocabError);
  }
}

TEST_CASE("claim encoding does not move when documents change") {
  StudentModel m(StudentKind::LSTM, tiny(6));
  const std::vector<TokenId> claim{2, 3};
  const Tensor before = m.encode_claim(claim);
  for (TokenId t = 2; t < 12; ++t) {
    const Tensor d = m.encode_document(std::vector<TokenId>{t, t, 4});
    (void)m.score(before, d);
  }
  CHECK(m.encode_claim(claim) == before);
}

TEST_CASE("CNN forward matches a hand-rolled conv and max-pool") {
  EncoderConfig c;
  c.vocab_size = 5;
  c.embed_dim = 2;
  c.hidden_dim = 1;
  c.kernel_widths = {2};
  c.filters = 1;
  c.max_doc_len = 8;
  c.seed = 9;
  StudentModel m(StudentKind::CNN, c);
  auto& ps = m.params();
  const Tensor& E = ps[0].value;      // [5,2]
  const Tensor& W = ps[1].value;      // [1,2,2]
  ps[2].value[0] = 0.03;              // conv bias
  const Tensor& P = ps[3].value;      // [1,1]
  ps[4].value[0] = -0.02;             // proj bias
  const std::vector<TokenId> doc{4, 1, 3};

  double best = -1e300;
  for (std::size_t t = 0; t + 2 <= doc.size(); ++t) {
    double v = ps[2].value[0];
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) v += W[j * 2 + k] * E.at(static_cast<std::size_t>(doc[t + j]), k);
    best = std::max(best, v);
  }
  const double expected = std::tanh(best * P[0] + ps[4].value[0]);
  CHECK(m.encode_document(doc)[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("LSTM single-token claim is one cell step") {
  EncoderConfig c = tiny(11);
  StudentModel m(StudentKind::LSTM, c);
  auto& ps = m.params();
  for (double& v : ps[3].value.data()) v = 0.05;  // bias
  const std::size_t E = 3, H = 3;
  const TokenId tok = 7;
  const Tensor& emb = ps[0].value;
  const Tensor& w_ih = ps[1].value;
  const Tensor& b = ps[3].value;
  std::vector<double> z(4 * H);
  for (std::size_t g = 0; g < 4 * H; ++g) {
    z[g] = b[g];
    for (std::size_t k = 0; k < E; ++k) z[g] += emb.at(tok, k) * w_ih.at(k, g);
  }
  const Tensor h = m.encode_claim(std::vector<TokenId>{tok});
  for (std::size_t k = 0; k < H; ++k) {
    const double i = sigm(z[k]), g = std::tanh(z[2 * H + k]), o = sigm(z[3 * H + k]);
    const double cell = i * g;
    CHECK(h[k] == doctest::Approx(o * std::tanh(cell)).epsilon(1e-14));
  }
}

TEST_CASE("student head is an affine map of [c ; d ; c*d]") {
  StudentModel m(StudentKind::CNN, tiny(12));
  const Tensor ce = m.encode_claim(std::vector<TokenId>{2, 3, 4});
  const Tensor de = m.encode_document(std::vector<TokenId>{5, 6, 7, 8});
  const Tensor& w = m.params()[m.join_w()].value;
  double manual = 0.0;
  for (std::size_t k = 0; k < 3; ++k) manual += w[k] * ce[k] + w[3 + k] * de[k] + w[6 + k] * ce[k] * de[k];
  CHECK(m.score(ce, de) == doctest::Approx(manual).epsilon(1e-14));

  const double s = m.score(ce, de);
  for (double& v : m.params()[m.join_w()].value.data()) v *= 2.0;
  CHECK(m.score(ce, de) == doctest::Approx(2.0 * s).epsilon(1e-14));

  m.params()[m.join_w()].value.fill(0.0);
  CHECK(m.score(ce, de) == 0.0);
  CHECK_THROWS_AS(m.score(ce, Tensor({1, 4})), ShapeError);
}

TEST_CASE("teacher is deterministic and depends on the claim") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TeacherModel t(tiny(seed));
    Rng rng(seed + 100);
    std::vector<TokenId> claim = random_ids(rng, 4, 12), doc = random_ids(rng, 6, 12);
    const double a = t.score(claim, doc);
    CHECK(a == t.score(claim, doc));
    CHECK(std::isfinite(a));
    claim[1] = static_cast<TokenId>((claim[1] + 1) % 12);
    CHECK(std::abs(t.score(claim, doc) - a) > 0.0);
  }
}

TEST_CASE("teacher affinity is the product of encoded sides") {
  EncoderConfig c = tiny(21);
  c.embed_dim = 2;
  c.hidden_dim = 2;
  TeacherModel t(c);
  const auto tr = t.trace(std::vector<TokenId>{3, 4}, std::vector<TokenId>{5, 6});
  REQUIRE(tr.L.shape() == Shape{2, 2});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const double manual = tr.D.at(i, 0) * tr.Q.at(j, 0) + tr.D.at(i, 1) * tr.Q.at(j, 1);
      CHECK(tr.L.at(i, j) == doctest::Approx(manual).epsilon(1e-15));
    }
}

TEST_CASE("full models pass grad_check on 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto claim = random_ids(rng, 3, 12), doc = random_ids(rng, 5, 12);
    for (StudentKind kind : {StudentKind::CNN, StudentKind::LSTM}) {
      StudentModel m(kind, tiny(seed));
      const auto params = m.params().pointers();
      const double err = grad_check_params(
          [&](Tape& t) { return m.score(t, m.encode_claim(t, claim), m.encode_document(t, doc)); }, params);
      CHECK(err < 1e-4);
    }
    TeacherModel t(tiny(seed));
    const auto params = t.params().pointers();
    const double err = grad_check_params([&](Tape& tp) { return t.score(tp, claim, doc); }, params);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Vocabulary vocab = Vocabulary::build(std::vector<std::vector<std::string>>{{"a", "b", "c"}});
  EncoderConfig c = tiny(8, vocab.size());
  StudentModel s(StudentKind::CNN, c);
  const std::string bytes = serialize_checkpoint(make_checkpoint(s, vocab));
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  StudentModel s2 = student_from_checkpoint(back);
  for (std::size_t i = 0; i < s.params().size(); ++i) CHECK(s.params()[i].value == s2.params()[i].value);
  CHECK(back.vocab.tokens() == vocab.tokens());
  CHECK_THROWS_AS(teacher_from_checkpoint(back), FormatError);
  CHECK_THROWS_AS(parse_checkpoint("nonsense"), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);

  TeacherModel t(tiny(9, vocab.size()));
  const TeacherModel t2 = teacher_from_checkpoint(parse_checkpoint(serialize_checkpoint(make_checkpoint(t, vocab))));
  CHECK(t2.score(std::vector<TokenId>{2, 3}, std::vector<TokenId>{4}) ==
        t.score(std::vector<TokenId>{2, 3}, std::vector<TokenId>{4}));
}

TEST_CASE("invalid configs are rejected") {
  EncoderConfig c = tiny(0);
  c.hidden_dim = 0;
  CHECK_THROWS_AS(StudentModel(StudentKind::LSTM, c), ConfigError);
  c = tiny(0);
  c.kernel_widths = {9};
  CHECK_THROWS_AS(StudentModel(StudentKind::CNN, c), ConfigError);
  CHECK_THROWS_AS(parse_student_kind("rnn"), ConfigError);
}
