#include "kdret/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kdret/errors.hpp"

namespace kdret {

using json = nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

namespace {

template <typename F>
void for_each_json_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  std::vector<Document> docs;
  for_each_json_line(path, [&](const json& j) {
    docs.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
  });
  return docs;
}

void write_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
  std::vector<json> rows;
  for (const auto& d : docs) rows.push_back({{"id", d.id}, {"text", d.text}});
  write_lines(path, rows);
}

std::vector<Claim> read_claims(const std::filesystem::path& path) {
  std::vector<Claim> claims;
  for_each_json_line(path, [&](const json& j) {
    claims.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                      j.at("relevant_doc_ids").get<std::vector<std::string>>()});
  });
  return claims;
}

void write_claims(const std::filesystem::path& path, std::span<const Claim> claims) {
  std::vector<json> rows;
  for (const auto& c : claims)
    rows.push_back({{"id", c.id}, {"text", c.text}, {"relevant_doc_ids", c.relevant_doc_ids}});
  write_lines(path, rows);
}

std::vector<CandidateSet> read_dataset(const std::filesystem::path& path) {
  std::vector<CandidateSet> sets;
  for_each_json_line(path, [&](const json& j) {
    CandidateSet s;
    s.claim_id = j.at("claim_id").get<std::string>();
    s.candidates = j.at("candidates").get<std::vector<std::string>>();
    s.labels = j.at("labels").get<std::vector<int>>();
    validate_candidate_set(s, s.candidates.size());
    sets.push_back(std::move(s));
  });
  return sets;
}

void write_dataset(const std::filesystem::path& path, std::span<const CandidateSet> sets) {
  std::vector<json> rows;
  for (const auto& s : sets)
    rows.push_back({{"claim_id", s.claim_id}, {"candidates", s.candidates}, {"labels", s.labels}});
  write_lines(path, rows);
}

std::vector<ClaimVector> read_claim_vectors(const std::filesystem::path& path, const std::string& field) {
  std::vector<ClaimVector> rows;
  for_each_json_line(path, [&](const json& j) {
    rows.push_back({j.at("claim_id").get<std::string>(), j.at(field).get<std::vector<double>>()});
  });
  return rows;
}

void write_claim_vectors(const std::filesystem::path& path, std::span<const ClaimVector> rows,
                         const std::string& field) {
  std::vector<json> out;
  for (const auto& r : rows) out.push_back({{"claim_id", r.claim_id}, {field, r.values}});
  write_lines(path, out);
}

}  // namespace kdret
