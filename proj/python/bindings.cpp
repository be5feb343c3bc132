#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kdret/corpus.hpp"
#include "kdret/distill.hpp"
#include "kdret/errors.hpp"
#include "kdret/index.hpp"
#include "kdret/io.hpp"
#include "kdret/metrics.hpp"
#include "kdret/models.hpp"
#include "kdret/synthetic.hpp"
#include "kdret/tfidf.hpp"

namespace py = pybind11;
using namespace kdret;

namespace {

py::dict report_dict(const RankingReport& r) {
  py::dict d;
  d["R1"] = r.r1;
  d["recall_micro3"] = r.recall_micro3;
  d["recall_macro3"] = r.recall_macro3;
  d["recall_micro5"] = r.recall_micro5;
  d["recall_macro5"] = r.recall_macro5;
  d["DCG"] = r.dcg;
  d["N"] = r.n;
  return d;
}

std::vector<RankedClaim> ranked(const std::vector<std::vector<int>>& labels,
                                const std::vector<std::vector<double>>& scores) {
  if (labels.size() != scores.size()) throw AlignmentError("labels and scores differ in claim count");
  std::vector<RankedClaim> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CandidateSet s;
    s.claim_id = std::to_string(i);
    s.labels = labels[i];
    char id[16];
    for (std::size_t j = 0; j < labels[i].size(); ++j) {
      std::snprintf(id, sizeof id, "%08zu", j);
      s.candidates.emplace_back(id);
    }
    out.push_back(rank_claim(s, scores[i]));
  }
  return out;
}

std::vector<Document> to_docs(const std::vector<std::pair<std::string, std::string>>& docs) {
  std::vector<Document> out;
  for (const auto& [id, text] : docs) out.push_back({id, text});
  return out;
}

EncoderConfig make_config(std::size_t vocab, std::size_t embed, std::size_t hidden, std::uint64_t seed, bool teacher) {
  EncoderConfig c = teacher ? default_teacher_config(vocab, seed) : default_student_config(vocab, seed);
  if (embed) c.embed_dim = embed;
  if (hidden) c.hidden_dim = hidden;
  return c;
}

// Student checkpoint plus its document index, the retrieval path end to end.
class Retriever {
 public:
  Retriever(const std::filesystem::path& checkpoint, const std::vector<std::pair<std::string, std::string>>& docs)
      : ckpt_(load_checkpoint(checkpoint)), model_(student_from_checkpoint(ckpt_)) {
    index_ = build_index(model_, ckpt_.vocab, Corpus(to_docs(docs)), checkpoint_hash(ckpt_), &ledger_);
  }
  std::vector<std::pair<std::string, double>> retrieve(const std::string& claim, std::size_t k) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& h : kdret::retrieve(model_, ckpt_.vocab, index_, claim, k, &ledger_))
      out.emplace_back(h.doc_id, h.score);
    return out;
  }
  py::dict ledger() const {
    const CostCounts c = ledger_.counts();
    py::dict d;
    d["doc_encoder"] = c.doc_encoder;
    d["claim_encoder"] = c.claim_encoder;
    d["join_head"] = c.join_head;
    d["teacher_joint"] = c.teacher_joint;
    return d;
  }
  void save_index(const std::filesystem::path& p) const { kdret::save_index(p, index_); }
  std::size_t size() const { return index_.size(); }

 private:
  Checkpoint ckpt_;
  StudentModel model_;
  DocIndex index_;
  CostLedger ledger_;
};

}  // namespace

PYBIND11_MODULE(_kdret, m) {
  m.doc() = "Knowledge-distilled document retrieval";

  auto base = py::register_exception<Error>(m, "Error");
#define KDRET_PY_ERROR(Name) py::register_exception<Name>(m, #Name, base.ptr())
  KDRET_PY_ERROR(ShapeError);
  KDRET_PY_ERROR(NumericsError);
  KDRET_PY_ERROR(VocabError);
  KDRET_PY_ERROR(EmptyCorpusError);
  KDRET_PY_ERROR(InsufficientCorpusError);
  KDRET_PY_ERROR(LabelError);
  KDRET_PY_ERROR(CacheError);
  KDRET_PY_ERROR(AlignmentError);
  KDRET_PY_ERROR(EmptyError);
  KDRET_PY_ERROR(EmptyIndexError);
  KDRET_PY_ERROR(FormatError);
  KDRET_PY_ERROR(ConfigError);
#undef KDRET_PY_ERROR

  m.def("tokenize", [](const std::string& s) { return tokenize(s); });

  m.def("temperature_softmax", [](const std::vector<double>& z, double T) { return temperature_softmax(z, T); },
        py::arg("logits"), py::arg("temperature"));
  m.def("soft_loss_ce", [](const std::vector<double>& t, const std::vector<double>& s, double T) {
    return soft_loss_ce(t, s, T);
  }, py::arg("teacher"), py::arg("student"), py::arg("temperature"));
  m.def("soft_loss_mse", [](const std::vector<double>& t, const std::vector<double>& s, double T) {
    return soft_loss_mse(t, s, T);
  }, py::arg("teacher"), py::arg("student"), py::arg("temperature"));
  m.def("hard_loss", [](const std::vector<int>& y, const std::vector<double>& s) { return hard_loss(y, s); },
        py::arg("labels"), py::arg("student"));
  m.def(
      "combined_loss",
      [](const std::vector<int>& y, std::optional<std::vector<double>> teacher, const std::vector<double>& s,
         double alpha, double T, const std::string& soft) {
        const LossConfig cfg{alpha, T, parse_soft_loss(soft)};
        return combined_loss(cfg, y, teacher ? &*teacher : nullptr, s);
      },
      py::arg("labels"), py::arg("teacher"), py::arg("student"), py::arg("alpha") = 0.5,
      py::arg("temperature") = 1.0, py::arg("soft_loss") = "ce");

  m.def("recall_micro", [](const std::vector<std::vector<int>>& y, const std::vector<std::vector<double>>& s,
                           std::size_t k) { return recall_micro(ranked(y, s), k); },
        py::arg("labels"), py::arg("scores"), py::arg("k"));
  m.def("recall_macro", [](const std::vector<std::vector<int>>& y, const std::vector<std::vector<double>>& s,
                           std::size_t k) { return recall_macro(ranked(y, s), k); },
        py::arg("labels"), py::arg("scores"), py::arg("k"));
  m.def("dcg", [](const std::vector<std::vector<int>>& y, const std::vector<std::vector<double>>& s) {
    return dcg(ranked(y, s));
  }, py::arg("labels"), py::arg("scores"));
  m.def("report", [](const std::vector<std::vector<int>>& y, const std::vector<std::vector<double>>& s) {
    return report_dict(make_report(ranked(y, s)));
  }, py::arg("labels"), py::arg("scores"));

  m.def(
      "mine_candidates",
      [](const std::vector<std::pair<std::string, std::string>>& docs, const std::string& claim, std::size_t k) {
        const Corpus corpus(to_docs(docs));
        const TfidfIndex index = TfidfIndex::build(corpus);
        std::vector<std::pair<std::string, double>> out;
        for (const auto& s : mine_candidates(index, tokenize(claim), k)) out.emplace_back(corpus.doc(s.doc).id, s.score);
        return out;
      },
      py::arg("docs"), py::arg("claim"), py::arg("k"));

  m.def(
      "make_toy",
      [](std::size_t docs, std::size_t claims, std::uint64_t seed) {
        ToyConfig c;
        c.docs = docs;
        c.claims = claims;
        c.seed = seed;
        const ToyData t = make_toy(c);
        py::list d, q;
        for (const auto& x : t.docs) d.append(py::make_tuple(x.id, x.text));
        for (const auto& x : t.claims) q.append(py::make_tuple(x.id, x.text, x.relevant_doc_ids));
        return py::make_tuple(d, q);
      },
      py::arg("docs") = 200, py::arg("claims") = 500, py::arg("seed") = 0);

  py::class_<StudentModel>(m, "StudentModel")
      .def(py::init([](const std::string& kind, std::size_t vocab, std::size_t embed, std::size_t hidden,
                       std::uint64_t seed) {
             return StudentModel(parse_student_kind(kind), make_config(vocab, embed, hidden, seed, false));
           }),
           py::arg("kind"), py::arg("vocab_size"), py::arg("embed_dim") = 0, py::arg("hidden_dim") = 0,
           py::arg("seed") = 0)
      .def("encode_document", [](const StudentModel& s, const std::vector<TokenId>& ids) {
        const Tensor t = s.encode_document(ids);
        return std::vector<double>(t.data().begin(), t.data().end());
      })
      .def("encode_claim", [](const StudentModel& s, const std::vector<TokenId>& ids) {
        const Tensor t = s.encode_claim(ids);
        return std::vector<double>(t.data().begin(), t.data().end());
      })
      .def("score", [](const StudentModel& s, const std::vector<TokenId>& claim, const std::vector<TokenId>& doc) {
        return s.score(s.encode_claim(claim), s.encode_document(doc));
      })
      .def("count_params", &StudentModel::count_params);

  py::class_<TeacherModel>(m, "TeacherModel")
      .def(py::init([](std::size_t vocab, std::size_t embed, std::size_t hidden, std::uint64_t seed) {
             return TeacherModel(make_config(vocab, embed, hidden, seed, true));
           }),
           py::arg("vocab_size"), py::arg("embed_dim") = 0, py::arg("hidden_dim") = 0, py::arg("seed") = 0)
      .def("score", [](const TeacherModel& t, const std::vector<TokenId>& claim, const std::vector<TokenId>& doc) {
        return t.score(claim, doc);
      })
      .def("count_params", &TeacherModel::count_params);

  py::class_<Retriever>(m, "Retriever")
      .def(py::init<const std::filesystem::path&, const std::vector<std::pair<std::string, std::string>>&>(),
           py::arg("checkpoint"), py::arg("docs"))
      .def("retrieve", &Retriever::retrieve, py::arg("claim"), py::arg("k"))
      .def("ledger", &Retriever::ledger)
      .def("save_index", &Retriever::save_index)
      .def("__len__", &Retriever::size);
}
