#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "bodyslam/errors.hpp"

namespace bodyslam {

using json = nlohmann::json;

template <typename Derived>
json to_json_array(const Eigen::MatrixBase<Derived>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v.derived()(i));
  return a;
}

// Row-major nested array.
template <typename Derived>
json to_json_matrix(const Eigen::MatrixBase<Derived>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename VecT>
VecT from_json_array(const json& a, Eigen::Index expected = -1) {
  if (!a.is_array()) throw FormatError("expected JSON array");
  const Eigen::Index n = static_cast<Eigen::Index>(a.size());
  if (expected >= 0 && n != expected) {
    throw FormatError("array length " + std::to_string(n) + ", expected " + std::to_string(expected));
  }
  VecT v;
  if constexpr (VecT::SizeAtCompileTime == Eigen::Dynamic) {
    v.resize(n);
  } else if (n != VecT::SizeAtCompileTime) {
    throw FormatError("array length mismatch for fixed-size vector");
  }
  for (Eigen::Index i = 0; i < n; ++i) v(i) = a[static_cast<std::size_t>(i)].get<double>();
  return v;
}

inline Eigen::MatrixXd from_json_matrix(const json& rows) {
  if (!rows.is_array()) throw FormatError("expected JSON matrix");
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) throw FormatError("ragged JSON matrix");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

inline void check_schema(const json& j, std::string_view schema, int version) {
  if (!j.is_object() || !j.contains("schema") || !j.contains("version")) {
    throw FormatError("missing schema header, expected " + std::string(schema));
  }
  if (j.at("schema").get<std::string>() != schema) {
    throw FormatError("schema mismatch: got " + j.at("schema").get<std::string>() + ", expected " +
                      std::string(schema));
  }
  if (j.at("version").get<int>() != version) {
    throw FormatError("unsupported " + std::string(schema) + " version " +
                      std::to_string(j.at("version").get<int>()));
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("parse error in " + path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(1) + "\n"); }

// FNV-1a, 64 bit. Used for config fingerprints and output-file hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

}  // namespace bodyslam
