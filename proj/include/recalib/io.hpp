#pragma once

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "recalib/errors.hpp"
#include "recalib/prob.hpp"

namespace recalib {

/// Parsed prediction file: probabilities (converted from raw logits when the
/// file carries z_* columns), optional labels, optional 0/1 holdout split.
struct PredictionData {
  ProbMatrix probs;
  std::optional<LabelVector> labels;
  std::optional<std::vector<int>> split;
  bool from_logits = false;
};

/// Shortest-exact decimal text for a double; round-trips bit-for-bit.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
  return v;
}

inline int parse_int(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError("line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
  }
  return static_cast<int>(v);
}

}  // namespace detail

inline PredictionData read_prediction_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("cannot open " + path);
  }
  std::string header;
  if (!std::getline(in, header)) {
    throw ParseError(path + ": empty file");
  }
  const std::vector<std::string> cols = detail::split_csv_line(header);

  int k = 0;
  bool use_logits = false;
  int label_col = -1;
  int split_col = -1;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const std::string& c = cols[i];
    if (c == "y") {
      if (label_col >= 0) throw ParseError(path + ": duplicate y column");
      label_col = static_cast<int>(i);
    } else if (c == "split") {
      if (split_col >= 0) throw ParseError(path + ": duplicate split column");
      split_col = static_cast<int>(i);
    } else if (c.rfind("p_", 0) == 0 || c.rfind("z_", 0) == 0) {
      const bool is_logit = c[0] == 'z';
      if (k > 0 && is_logit != use_logits) {
        throw ParseError(path + ": p_* and z_* columns are mutually exclusive");
      }
      use_logits = is_logit;
      const int idx = detail::parse_int(c.substr(2), 1);
      if (idx != k || static_cast<int>(i) != k) {
        throw ParseError(path + ": expected contiguous ascending " +
                         std::string(is_logit ? "z_*" : "p_*") + " columns from 0");
      }
      ++k;
    } else {
      throw ParseError(path + ": unknown column '" + c + "'");
    }
  }
  if (k < 2) {
    throw ParseError(path + ": need at least two probability/logit columns");
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<int> split;
  std::string line;
  std::size_t line_no = 1;
  Eigen::Index n = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> toks = detail::split_csv_line(line);
    if (toks.size() != cols.size()) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": expected " +
                       std::to_string(cols.size()) + " fields, got " + std::to_string(toks.size()));
    }
    for (int c = 0; c < k; ++c) {
      values.push_back(detail::parse_double(toks[static_cast<std::size_t>(c)], line_no));
    }
    if (label_col >= 0) {
      labels.push_back(detail::parse_int(toks[static_cast<std::size_t>(label_col)], line_no));
    }
    if (split_col >= 0) {
      split.push_back(detail::parse_int(toks[static_cast<std::size_t>(split_col)], line_no));
    }
    ++n;
  }
  if (n == 0) {
    throw ParseError(path + ": no data rows");
  }

  Matrix raw(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) {
      raw(i, c) = values[static_cast<std::size_t>(i) * k + c];
    }
  }

  std::optional<ProbMatrix> probs;
  try {
    if (use_logits) {
      probs = softmax_rows(LogitMatrix::from_raw(std::move(raw)));
    } else {
      probs = ProbMatrix(std::move(raw));
    }
  } catch (const std::exception& e) {
    throw ParseError(path + ": " + e.what());
  }

  PredictionData out{std::move(*probs), std::nullopt, std::nullopt, use_logits};
  if (label_col >= 0) {
    try {
      out.labels = LabelVector(std::move(labels), k);
    } catch (const std::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
  if (split_col >= 0) {
    for (int s : split) {
      if (s != 0 && s != 1) throw ParseError(path + ": split values must be 0 or 1");
    }
    out.split = std::move(split);
  }
  return out;
}

inline void write_prediction_csv(const std::string& path, const Matrix& probs,
                                 const std::vector<int>* labels = nullptr) {
  std::ofstream out(path);
  if (!out) {
    throw ParseError("cannot write " + path);
  }
  const int k = static_cast<int>(probs.cols());
  for (int c = 0; c < k; ++c) {
    out << "p_" << c << (c + 1 < k ? "," : "");
  }
  if (labels) out << ",y";
  out << "\n";
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (int c = 0; c < k; ++c) {
      out << format_double(probs(i, c)) << (c + 1 < k ? "," : "");
    }
    if (labels) out << "," << (*labels)[static_cast<std::size_t>(i)];
    out << "\n";
  }
  if (!out) {
    throw ParseError("failed writing " + path);
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("cannot open " + path);
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) {
    throw ParseError("cannot write " + path);
  }
  out << j.dump(2) << "\n";
  if (!out) {
    throw ParseError("failed writing " + path);
  }
}

}  // namespace recalib
