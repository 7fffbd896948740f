#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fscil/data.hpp"
#include "fscil/error.hpp"

namespace fscil {

// Per-session accuracies as fractions in [0,1]. acc_all scores test data of
// all classes seen so far, acc_base only the base classes, acc_new only the
// incremental classes (absent at t=1). Externally loaded matrices may leave
// fields empty.
struct SessionAccuracy {
  std::optional<double> acc_all;
  std::optional<double> acc_base;
  std::optional<double> acc_new;
  std::optional<int> active_classes;
};

struct AccuracyMatrix {
  std::vector<SessionAccuracy> rows;  // rows[0] is session 1

  std::size_t sessions() const { return rows.size(); }

  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      for (const auto& v : {r.acc_all, r.acc_base, r.acc_new}) {
        if (v && (*v < 0.0 || *v > 1.0)) {
          throw SchemaError("accuracy out of [0,1] at session " + std::to_string(i + 1));
        }
      }
      if (i == 0 && r.acc_new) {
        throw SchemaError("acc_new must be absent at session 1");
      }
    }
  }
};

// performance drop: acc_all(1) - acc_all(T)
inline double pd(const AccuracyMatrix& m) {
  if (m.sessions() < 2) throw UndefinedMetricError("pd needs at least two sessions");
  const auto& first = m.rows.front().acc_all;
  const auto& last = m.rows.back().acc_all;
  if (!first || !last) throw UndefinedMetricError("pd needs acc_all at the first and last session");
  return *first - *last;
}

// mean over t = 2..T of acc_new(t)
inline double nla(const AccuracyMatrix& m) {
  if (m.sessions() < 2) throw UndefinedMetricError("nla needs at least two sessions");
  double s = 0.0;
  for (std::size_t t = 2; t <= m.sessions(); ++t) {
    const auto& v = m.rows[t - 1].acc_new;
    if (!v) throw UndefinedMetricError("nla needs acc_new at session " + std::to_string(t));
    s += *v;
  }
  return s / static_cast<double>(m.sessions() - 1);
}

// mean over t = 1..T of acc_base(t)
inline double bma(const AccuracyMatrix& m) {
  if (m.sessions() < 1) throw UndefinedMetricError("bma needs at least one session");
  double s = 0.0;
  for (std::size_t t = 1; t <= m.sessions(); ++t) {
    const auto& v = m.rows[t - 1].acc_base;
    if (!v) throw UndefinedMetricError("bma needs acc_base at session " + std::to_string(t));
    s += *v;
  }
  return s / static_cast<double>(m.sessions());
}

// Percentage with two decimals, the rendering used in all reports.
inline std::string format_pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV report: session rows (t, acc_all, acc_base, acc_new, active_classes)
// in percent, then one summary row (pd, nla, bma). Unknown fields stay
// empty; the reader accepts the same layout back.
// ---------------------------------------------------------------------------

inline void write_matrix_csv(const AccuracyMatrix& m, const std::string& path, bool with_summary = true) {
  m.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "t,acc_all,acc_base,acc_new,active_classes\n";
  for (std::size_t t = 1; t <= m.sessions(); ++t) {
    const auto& r = m.rows[t - 1];
    out << t << ",";
    if (r.acc_all) out << format_pct(*r.acc_all);
    out << ",";
    if (r.acc_base) out << format_pct(*r.acc_base);
    out << ",";
    if (r.acc_new) out << format_pct(*r.acc_new);
    out << ",";
    if (r.active_classes) out << *r.active_classes;
    out << "\n";
  }
  if (with_summary) {
    auto field = [&](auto fn) -> std::string {
      try {
        return format_pct(fn(m));
      } catch (const UndefinedMetricError&) {
        return "";
      }
    };
    out << "summary," << field(pd) << "," << field(nla) << "," << field(bma) << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

inline AccuracyMatrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  AccuracyMatrix m;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line);
    if (!saw_header) {
      if (fields.empty() || fields[0] != "t") {
        throw SchemaError(path + ": first row must be the header 't,acc_all,acc_base,acc_new,active_classes'");
      }
      saw_header = true;
      continue;
    }
    if (fields[0] == "summary") continue;
    if (fields.size() != 5) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected 5 columns");
    }
    long long t;
    if (!detail::parse_int(fields[0], t) || t != static_cast<long long>(m.rows.size() + 1)) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": session index must increase from 1");
    }
    SessionAccuracy row;
    auto read_pct = [&](const std::string& s, const char* what) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      double v;
      if (!detail::parse_double(s, v)) {
        throw SchemaError(path + ":" + std::to_string(line_no) + ": bad " + std::string(what) + " value '" + s + "'");
      }
      return v / 100.0;
    };
    row.acc_all = read_pct(fields[1], "acc_all");
    row.acc_base = read_pct(fields[2], "acc_base");
    row.acc_new = read_pct(fields[3], "acc_new");
    if (!fields[4].empty()) {
      long long n;
      if (!detail::parse_int(fields[4], n)) {
        throw SchemaError(path + ":" + std::to_string(line_no) + ": bad active_classes value");
      }
      row.active_classes = static_cast<int>(n);
    }
    m.rows.push_back(row);
  }
  if (m.rows.empty()) throw SchemaError(path + ": no session rows");
  m.validate();
  return m;
}

}  // namespace fscil
