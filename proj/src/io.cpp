#include "otalign/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace otalign {

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

// Parses a full string as a long; no trailing junk allowed.
long parse_int(const std::string& tok, const std::string& path, int line_no) {
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(tok.c_str(), &end, 10);
  if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE)
    throw ParseError(path + ":" + std::to_string(line_no) +
                     ": expected integer, got \"" + tok + "\"");
  return v;
}

double parse_double(const std::string& tok, const std::string& path,
                    int line_no) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size())
    throw ParseError(path + ":" + std::to_string(line_no) +
                     ": expected number, got \"" + tok + "\"");
  return v;
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Graph load_graph(const std::string& path, std::optional<int> num_nodes) {
  std::ifstream in = open_in(path);
  std::vector<Edge> edges;
  int max_id = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    auto parts = split(line, '\t');
    if (parts.size() != 2)
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected two tab-separated ids");
    long a = parse_int(parts[0], path, line_no);
    long b = parse_int(parts[1], path, line_no);
    if (a < 0 || b < 0)
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": negative node id");
    if (a == b)
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": self-loop at node " + std::to_string(a));
    if (num_nodes && (a >= *num_nodes || b >= *num_nodes))
      throw ValidationError(path + ":" + std::to_string(line_no) + ": id " +
                            std::to_string(std::max(a, b)) +
                            " >= num_nodes " + std::to_string(*num_nodes));
    edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
    max_id = std::max(max_id, static_cast<int>(std::max(a, b)));
  }
  int n = num_nodes ? *num_nodes : max_id + 1;
  return Graph::make(n, std::move(edges));
}

void save_graph(const Graph& g, const std::string& path) {
  std::ofstream out = open_out(path);
  for (const auto& [a, b] : g.edges) out << a << '\t' << b << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<int> load_labels(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<std::pair<long, long>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    auto parts = split(line, ',');
    if (parts.size() != 2)
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected \"node_id,label\"");
    rows.emplace_back(parse_int(parts[0], path, line_no),
                      parse_int(parts[1], path, line_no));
  }
  int n = static_cast<int>(rows.size());
  std::vector<int> labels(n, -1);
  for (const auto& [id, y] : rows) {
    if (id < 0 || id >= n)
      throw ValidationError(path + ": node id " + std::to_string(id) +
                            " outside [0," + std::to_string(n) +
                            ") implied by row count");
    if (labels[id] != -1)
      throw ValidationError(path + ": duplicate node id " + std::to_string(id));
    if (y < 0)
      throw ValidationError(path + ": negative label for node " +
                            std::to_string(id));
    labels[id] = static_cast<int>(y);
  }
  return labels;
}

void save_labels(const std::vector<int>& labels, const std::string& path) {
  std::ofstream out = open_out(path);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out << i << ',' << labels[i] << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Matrix load_matrix(const std::string& path, std::optional<int> expected_rows) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto parts = split(line, ',');
    std::vector<double> row;
    row.reserve(parts.size());
    for (const auto& tok : parts) {
      double v = parse_double(tok, path, line_no);
      if (!std::isfinite(v))
        throw ValidationError(path + ":" + std::to_string(line_no) +
                              ": non-finite value \"" + tok + "\"");
      row.push_back(v);
    }
    if (rows.empty())
      width = row.size();
    else if (row.size() != width)
      throw ParseError(path + ":" + std::to_string(line_no) + ": row width " +
                       std::to_string(row.size()) + " != " +
                       std::to_string(width));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(path + ": empty matrix");
  if (expected_rows && static_cast<int>(rows.size()) != *expected_rows)
    throw ValidationError(path + ": has " + std::to_string(rows.size()) +
                          " rows, expected " + std::to_string(*expected_rows));
  Matrix m(rows.size(), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) m(i, j) = rows[i][j];
  return m;
}

void save_matrix(const Matrix& m, const std::string& path) {
  std::ofstream out = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

RaggedEmbeddingSet load_ragged(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  int line_no = 0;
  std::vector<std::pair<long, Matrix>> entries;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("id") || !j.contains("vectors"))
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": object needs \"id\" and \"vectors\"");
    long id = j.at("id").get<long>();
    const auto& vecs = j.at("vectors");
    if (!vecs.is_array() || vecs.empty())
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": \"vectors\" must be a non-empty array "
                            "(a neighborhood must include the node itself)");
    std::size_t d = 0;
    Matrix m(vecs.size(), vecs[0].is_array() ? vecs[0].size() : 0);
    for (std::size_t r = 0; r < vecs.size(); ++r) {
      if (!vecs[r].is_array())
        throw ValidationError(path + ":" + std::to_string(line_no) +
                              ": vector " + std::to_string(r) +
                              " is not an array");
      if (r == 0) d = vecs[r].size();
      if (vecs[r].size() != d)
        throw ValidationError(path + ":" + std::to_string(line_no) +
                              ": inconsistent vector length");
      for (std::size_t c = 0; c < d; ++c) {
        double v = vecs[r][c].get<double>();
        if (!std::isfinite(v))
          throw ValidationError(path + ":" + std::to_string(line_no) +
                                ": non-finite value");
        m(r, c) = v;
      }
    }
    entries.emplace_back(id, std::move(m));
  }
  int n = static_cast<int>(entries.size());
  RaggedEmbeddingSet out;
  out.per_node.resize(n);
  std::vector<bool> seen(n, false);
  for (auto& [id, m] : entries) {
    if (id < 0 || id >= n)
      throw ValidationError(path + ": id " + std::to_string(id) +
                            " outside [0," + std::to_string(n) +
                            ") implied by line count");
    if (seen[id])
      throw ValidationError(path + ": duplicate id " + std::to_string(id));
    seen[id] = true;
    out.per_node[id] = std::move(m);
  }
  out.validate(path);
  return out;
}

void save_ragged(const RaggedEmbeddingSet& r, const std::string& path) {
  std::ofstream out = open_out(path);
  for (int i = 0; i < r.size(); ++i) {
    nlohmann::json j;
    j["id"] = i;
    auto vecs = nlohmann::json::array();
    const Matrix& m = r.per_node[i];
    for (Eigen::Index a = 0; a < m.rows(); ++a) {
      auto row = nlohmann::json::array();
      for (Eigen::Index b = 0; b < m.cols(); ++b) row.push_back(m(a, b));
      vecs.push_back(std::move(row));
    }
    j["vectors"] = std::move(vecs);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

Report load_report(const std::string& path) {
  std::ifstream in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return Report::from_json(j);
}

void save_report(const Report& r, const std::string& path) {
  std::ofstream out = open_out(path);
  out << r.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace otalign
