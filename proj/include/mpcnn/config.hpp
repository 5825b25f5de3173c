#pragma once

// Sectioned key-value text files:
//
//   # comment
//   [section]
//   key = value
//
// Keys are addressed as "section.key" (or just "key" before any section).
// Matrices are written row-major with ';' between rows: "1 1; 0 1".

#include <mpcnn/numerics.hpp>

#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mpcnn {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string format_vector(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v(i));
  }
  return out;
}

inline std::string format_matrix(const Matrix& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out += "; ";
    out += format_vector(m.row(r).transpose());
  }
  return out;
}

inline Vector parse_vector(const std::string& text) {
  std::istringstream is(text);
  std::vector<double> vals;
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, "not a number: '" + tok + "'");
    }
  }
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline Matrix parse_matrix(const std::string& text) {
  std::vector<Vector> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) {
    if (trim(row).empty()) continue;
    rows.push_back(parse_vector(row));
  }
  if (rows.empty()) throw Error(ErrorCode::FormatError, "empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw Error(ErrorCode::FormatError, "ragged matrix rows in '" + text + "'");
    m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  }
  return m;
}

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw Error(ErrorCode::FormatError, source + ":" + std::to_string(line_no) + ": bad section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::FormatError, source + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw Error(ErrorCode::FormatError, source + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw Error(ErrorCode::FormatError, "missing key '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    const Vector parsed = parse_vector(*v);
    if (parsed.size() != 1) throw Error(ErrorCode::FormatError, "key '" + key + "' must be a scalar");
    return parsed(0);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const long long out = std::stoll(*v, &used);
      if (used != v->size()) throw std::invalid_argument(*v);
      return out;
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, "key '" + key + "' must be an integer");
    }
  }

  std::vector<long long> get_int_list(const std::string& key, std::vector<long long> fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::vector<long long> out;
    std::string tok;
    std::istringstream is(*v);
    while (std::getline(is, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      try {
        out.push_back(std::stoll(tok));
      } catch (const std::exception&) {
        throw Error(ErrorCode::FormatError, "key '" + key + "': bad integer '" + tok + "'");
      }
    }
    return out;
  }

  std::vector<std::string> get_list(const std::string& key, std::vector<std::string> fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::vector<std::string> out;
    std::string tok;
    std::istringstream is(*v);
    while (std::getline(is, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(tok);
    }
    return out;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mpcnn
