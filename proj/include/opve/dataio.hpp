#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "opve/core.hpp"
#include "opve/error.hpp"

namespace opve {

// Shortest decimal form that parses back to the same double (at most 17 significant digits).
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  if (token.empty()) return false;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  return res.ec == std::errc() && res.ptr == token.data() + token.size();
}

inline std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

/// Sparse multiclass dataset. Feature indices are 0-based here and 1-based on
/// the wire; labels are remapped to 0..C-1 in increasing raw-label order.
struct LabeledDataset {
  struct Row {
    long long raw_label = 0;
    std::size_t label = 0;
    std::vector<std::pair<std::size_t, double>> features;  // strictly increasing indices
  };

  std::vector<Row> rows;
  std::size_t n_features = 0;
  std::vector<long long> label_values;  // label id -> raw label

  std::size_t size() const { return rows.size(); }
  std::size_t n_classes() const { return label_values.size(); }

  bool operator==(const LabeledDataset& other) const {
    if (n_features != other.n_features || label_values != other.label_values || rows.size() != other.rows.size()) {
      return false;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Row& a = rows[i];
      const Row& b = other.rows[i];
      if (a.raw_label != b.raw_label || a.label != b.label || a.features != b.features) return false;
    }
    return true;
  }
};

namespace detail {

inline void assign_label_ids(LabeledDataset& ds) {
  std::vector<long long> values;
  for (const auto& r : ds.rows) values.push_back(r.raw_label);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  for (auto& r : ds.rows) {
    r.label = static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), r.raw_label) - values.begin());
  }
  ds.label_values = std::move(values);
}

}  // namespace detail

/// Parses `label (index:value)*` lines. '#' starts a comment; blank lines are
/// skipped; LF and CRLF are accepted. `n_features` overrides the width (it
/// must cover every index seen).
inline LabeledDataset parse_libsvm(std::istream& in, std::optional<std::size_t> n_features = std::nullopt) {
  LabeledDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = detail::trim(view);
    if (view.empty()) continue;
    const auto tokens = detail::split_whitespace(view);
    LabeledDataset::Row row;
    if (!detail::parse_number(tokens[0], row.raw_label)) {
      throw ParseError(line_no, "malformed label '" + std::string(tokens[0]) + "'");
    }
    std::size_t prev = 0;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto tok = tokens[i];
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) throw ParseError(line_no, "malformed feature '" + std::string(tok) + "'");
      std::size_t index = 0;
      double value = 0.0;
      if (!detail::parse_number(tok.substr(0, colon), index) || index == 0) {
        throw ParseError(line_no, "malformed feature index in '" + std::string(tok) + "'");
      }
      if (!detail::parse_number(tok.substr(colon + 1), value) || !std::isfinite(value)) {
        throw ParseError(line_no, "malformed feature value in '" + std::string(tok) + "'");
      }
      if (index == prev) throw ParseError(line_no, "duplicate feature index " + std::to_string(index));
      if (index < prev) throw ParseError(line_no, "feature indices not increasing at " + std::to_string(index));
      if (n_features && index > *n_features) {
        throw ParseError(line_no, "feature index " + std::to_string(index) + " exceeds n_features");
      }
      prev = index;
      max_index = std::max(max_index, index);
      row.features.emplace_back(index - 1, value);
    }
    ds.rows.push_back(std::move(row));
  }
  ds.n_features = n_features ? *n_features : max_index;
  detail::assign_label_ids(ds);
  return ds;
}

inline void write_libsvm(std::ostream& out, const LabeledDataset& ds) {
  for (const auto& row : ds.rows) {
    out << row.raw_label;
    for (const auto& [index, value] : row.features) out << ' ' << (index + 1) << ':' << format_double(value);
    out << '\n';
  }
}

struct ScalingConstants {
  Vector min;
  Vector max;
};

struct DenseDataset {
  PotentialOutcomeDataset data;     // y(a) = 1[a = label]
  std::vector<std::size_t> labels;  // 0-based
  std::vector<long long> label_values;
  std::optional<ScalingConstants> scaling;
};

enum class Scaling { None, UnitRange };

/// Dense covariates and one-hot potential outcomes. Unit-range scaling maps
/// each feature's observed [min, max] to [0, 1] (constant features to 0);
/// passing `replay` applies previously computed constants instead.
inline DenseDataset densify(const LabeledDataset& ds, Scaling scaling = Scaling::None,
                            const std::optional<ScalingConstants>& replay = std::nullopt) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto d = static_cast<Eigen::Index>(ds.n_features);
  const auto k = static_cast<Eigen::Index>(ds.n_classes());
  DenseDataset out;
  out.data.covariates = Matrix::Zero(n, d);
  out.data.outcomes = Matrix::Zero(n, k);
  out.label_values = ds.label_values;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = ds.rows[static_cast<std::size_t>(i)];
    for (const auto& [index, value] : row.features) out.data.covariates(i, static_cast<Eigen::Index>(index)) = value;
    out.data.outcomes(i, static_cast<Eigen::Index>(row.label)) = 1.0;
    out.labels.push_back(row.label);
  }
  if (scaling == Scaling::UnitRange) {
    ScalingConstants c;
    if (replay) {
      if (replay->min.size() != d || replay->max.size() != d) throw StructuralError("scaling constants width differs");
      c = *replay;
    } else if (n > 0) {
      c.min = out.data.covariates.colwise().minCoeff().transpose();
      c.max = out.data.covariates.colwise().maxCoeff().transpose();
    } else {
      c.min = Vector::Zero(d);
      c.max = Vector::Zero(d);
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      const double range = c.max(j) - c.min(j);
      if (range > 0.0) {
        out.data.covariates.col(j) = (out.data.covariates.col(j).array() - c.min(j)) / range;
      } else {
        out.data.covariates.col(j).setZero();
      }
    }
    out.scaling = std::move(c);
  }
  return out;
}

// Back to sparse form; zero entries are dropped.
inline LabeledDataset to_labeled(const DenseDataset& dense) {
  LabeledDataset ds;
  ds.n_features = dense.data.dim();
  ds.label_values = dense.label_values;
  for (std::size_t i = 0; i < dense.data.size(); ++i) {
    LabeledDataset::Row row;
    row.label = dense.labels[i];
    row.raw_label = dense.label_values.at(row.label);
    for (Eigen::Index j = 0; j < dense.data.covariates.cols(); ++j) {
      const double v = dense.data.covariates(static_cast<Eigen::Index>(i), j);
      if (v != 0.0) row.features.emplace_back(static_cast<std::size_t>(j), v);
    }
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

/// Log CSV: header `t,a,y,p1..pK,x1..xd`, actions 1-based. Propensity columns
/// are written when the log is empty or any record carries them; a record
/// without one leaves its p cells empty.
inline void write_log_csv(std::ostream& out, const BanditLog& log) {
  const bool with_p = log.empty() || std::any_of(log.records().begin(), log.records().end(),
                                                 [](const LogRecord& r) { return r.true_propensity.has_value(); });
  out << "t,a,y";
  if (with_p) {
    for (std::size_t a = 1; a <= log.num_actions(); ++a) out << ",p" << a;
  }
  for (std::size_t j = 1; j <= log.dim(); ++j) out << ",x" << j;
  out << '\n';
  for (const LogRecord& r : log.records()) {
    out << r.t << ',' << (r.action + 1) << ',' << format_double(r.reward);
    if (with_p) {
      for (std::size_t a = 0; a < log.num_actions(); ++a) {
        out << ',';
        if (r.true_propensity) out << format_double((*r.true_propensity)(static_cast<Eigen::Index>(a)));
      }
    }
    for (Eigen::Index j = 0; j < r.x.size(); ++j) out << ',' << format_double(r.x(j));
    out << '\n';
  }
}

/// Reads the log CSV. Without propensity columns K comes from `num_actions`
/// or, failing that, the largest action id seen.
inline BanditLog read_log_csv(std::istream& in, std::optional<std::size_t> num_actions = std::nullopt) {
  std::string line;
  std::size_t line_no = 0;
  std::string header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) {
      header = line;
      break;
    }
  }
  if (header.empty()) throw ParseError(line_no == 0 ? 1 : line_no, "missing header");
  const std::size_t header_line = line_no;
  const auto cols = detail::split_commas(header);
  if (cols.size() < 3 || cols[0] != "t" || cols[1] != "a" || cols[2] != "y") {
    throw ParseError(header_line, "header must start with t,a,y");
  }
  std::size_t k_cols = 0;
  std::size_t d_cols = 0;
  for (std::size_t i = 3; i < cols.size(); ++i) {
    const std::string expected_p = "p" + std::to_string(k_cols + 1);
    const std::string expected_x = "x" + std::to_string(d_cols + 1);
    if (d_cols == 0 && cols[i] == expected_p) {
      ++k_cols;
    } else if (cols[i] == expected_x) {
      ++d_cols;
    } else {
      throw ParseError(header_line, "unexpected column '" + std::string(cols[i]) + "'");
    }
  }
  if (k_cols > 0 && num_actions && *num_actions != k_cols) {
    throw ParseError(header_line, "propensity columns disagree with the requested K");
  }

  struct Pending {
    std::size_t line;
    LogRecord record;
  };
  std::vector<Pending> pending;
  std::size_t max_action = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != cols.size()) throw ParseError(line_no, "expected " + std::to_string(cols.size()) + " fields");
    LogRecord rec;
    std::size_t action = 0;
    if (!detail::parse_number(cells[0], rec.t)) throw ParseError(line_no, "malformed t");
    if (!detail::parse_number(cells[1], action) || action == 0) throw ParseError(line_no, "malformed action id");
    if (!detail::parse_number(cells[2], rec.reward)) throw ParseError(line_no, "malformed reward");
    rec.action = action - 1;
    max_action = std::max(max_action, action);
    if (k_cols > 0) {
      std::size_t empty = 0;
      Vector p(static_cast<Eigen::Index>(k_cols));
      for (std::size_t a = 0; a < k_cols; ++a) {
        const auto cell = cells[3 + a];
        if (cell.empty()) {
          ++empty;
          continue;
        }
        if (!detail::parse_number(cell, p(static_cast<Eigen::Index>(a)))) throw ParseError(line_no, "malformed propensity");
      }
      if (empty != 0 && empty != k_cols) throw ParseError(line_no, "partially missing propensity vector");
      if (empty == 0) rec.true_propensity = std::move(p);
    }
    rec.x.resize(static_cast<Eigen::Index>(d_cols));
    for (std::size_t j = 0; j < d_cols; ++j) {
      if (!detail::parse_number(cells[3 + k_cols + j], rec.x(static_cast<Eigen::Index>(j)))) {
        throw ParseError(line_no, "malformed covariate");
      }
    }
    pending.push_back({line_no, std::move(rec)});
  }

  const std::size_t k = k_cols > 0 ? k_cols : (num_actions ? *num_actions : std::max<std::size_t>(1, max_action));
  BanditLog log(k, d_cols);
  for (auto& p : pending) {
    try {
      log.append(std::move(p.record));
    } catch (const StructuralError& e) {
      throw ParseError(p.line, e.what());
    }
  }
  return log;
}

}  // namespace opve
