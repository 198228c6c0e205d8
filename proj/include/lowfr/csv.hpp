#pragma once

// CSV file formats for every artifact the command-line tool reads or writes.
// One number format everywhere: "%.17g", which survives write -> parse ->
// write without changing a byte.  Fields containing commas or quotes (many
// parameter names do, e.g. theta[1,1]) are quoted RFC-4180 style.
//
// Formats:
//   data.csv        id,y,cov_<name>...,x_<exposure>_<t>...   empty cell = missing
//   truth.csv       term,value
//   draws.csv       chain,iter,treedepth__,divergent__,accept_stat__,stepsize__,<params>
//   diagnostics.csv name,rhat,ess_bulk,ess_tail  (+ __divergent_total__ row)
//   induced.csv     draw,alpha0,alpha[<exp>@<t>]...,gamma[r,c]...  (r<=c, 1-based,
//                   row-major upper triangle of the symmetric pT x pT matrix)
//   effects.csv     label,mean,lo95,hi95,excludes_zero
//   surface.csv     u,v,mean,lo,hi,excludes_zero
//   ppc.csv         subject,observed,mean,lo95,hi95,inside
//   cv.csv          subject,fold rows, then an __mse__ summary row
//   imputed.csv     subject,exposure,time,mean,lo95,hi95
//   metrics.csv     model,rep,status,<MetricsRow fields>
//
// Also here: the effect-group definitions file (LABEL = member, member, ...)
// and the --surface axis/grid specification, since both name (exposure, time)
// subsets with the same member syntax.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lowfr/dataset.hpp"
#include "lowfr/diagnostics.hpp"
#include "lowfr/effects.hpp"
#include "lowfr/fit.hpp"
#include "lowfr/induced.hpp"
#include "lowfr/nuts.hpp"
#include "lowfr/simgen.hpp"

namespace lowfr {
namespace csv_detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << escape(fields[i]);
  }
  os << '\n';
}

// Split one line into fields, honoring quoted fields with doubled quotes.
inline std::vector<std::string> split_row(const std::string& line, int lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted)
    throw UsageError("csv line " + std::to_string(lineno) + ": unterminated quote");
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  if (s.empty()) throw UsageError(where + ": empty numeric field");
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw UsageError(where + ": cannot parse number '" + s + "'");
  return v;
}

inline long parse_int(const std::string& s, const std::string& where) {
  if (s.empty()) throw UsageError(where + ": empty integer field");
  const char* begin = s.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0')
    throw UsageError(where + ": cannot parse integer '" + s + "'");
  return v;
}

// Read all lines, tolerating a trailing newline and CRLF input.
inline std::vector<std::string> read_lines(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// "name@t" -> (name, t-1); bare "name" -> (name, -1) meaning all times.
inline std::pair<std::string, int> parse_member(const std::string& raw,
                                                const std::string& where) {
  const std::string m = trim(raw);
  if (m.empty()) throw UsageError(where + ": empty member");
  const std::size_t at = m.rfind('@');
  if (at == std::string::npos) return {m, -1};
  const std::string name = trim(m.substr(0, at));
  if (name.empty()) throw UsageError(where + ": empty exposure name in '" + m + "'");
  const long t = parse_int(trim(m.substr(at + 1)), where);
  if (t < 1) throw UsageError(where + ": time index must be >= 1 in '" + m + "'");
  return {name, int(t) - 1};
}

inline int exposure_index(const std::string& name,
                          const std::vector<std::string>& exposures,
                          const std::string& where) {
  for (std::size_t j = 0; j < exposures.size(); ++j)
    if (exposures[j] == name) return int(j);
  throw UsageError(where + ": unknown exposure '" + name + "'");
}

}  // namespace csv_detail

// ---------------------------------------------------------------------------
// data.csv

inline void write_data_csv(std::ostream& os, const ExposureDataset& data) {
  using csv_detail::fmt;
  for (const auto& name : data.exposure_names)
    if (name.empty() || name.find_first_of(",\"\n") != std::string::npos)
      throw UsageError("write_data_csv: exposure name '" + name +
                       "' not representable in a CSV header");
  for (const auto& name : data.covariate_names)
    if (name.empty() || name.find_first_of(",\"\n") != std::string::npos)
      throw UsageError("write_data_csv: covariate name '" + name +
                       "' not representable in a CSV header");
  std::vector<std::string> header = {"id", "y"};
  for (const auto& name : data.covariate_names) header.push_back("cov_" + name);
  for (int j = 0; j < data.p; ++j)
    for (int t = 0; t < data.T; ++t) header.push_back("x_" + data.xcol_name(j, t));
  csv_detail::write_row(os, header);
  for (int i = 0; i < data.n; ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(i + 1));
    row.push_back(fmt(data.y[i]));
    for (int c = 0; c < data.n_cov(); ++c) row.push_back(fmt(data.z(i, c)));
    for (int j = 0; j < data.p; ++j)
      for (int t = 0; t < data.T; ++t) {
        const double v = data.x(i, data.xcol(j, t));
        row.push_back(std::isnan(v) ? std::string() : fmt(v));
      }
    csv_detail::write_row(os, row);
  }
}

inline ExposureDataset read_data_csv(std::istream& is) {
  using namespace csv_detail;
  const auto lines = read_lines(is);
  if (lines.empty()) throw UsageError("data csv: empty file");
  const auto header = split_row(lines[0], 1);
  if (header.size() < 3 || header[0] != "id" || header[1] != "y")
    throw UsageError("data csv: header must start with id,y");

  std::vector<std::string> covariates;
  std::vector<std::string> exposures;
  // Per x-column: exposure index and 0-based time.
  std::vector<std::pair<int, int>> xcols;
  bool seen_x = false;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h.rfind("cov_", 0) == 0) {
      if (seen_x)
        throw UsageError("data csv: covariate column '" + h +
                         "' appears after exposure columns");
      covariates.push_back(h.substr(4));
    } else if (h.rfind("x_", 0) == 0) {
      seen_x = true;
      const std::string body = h.substr(2);
      const std::size_t us = body.rfind('_');
      if (us == std::string::npos || us == 0 || us + 1 == body.size())
        throw UsageError("data csv: exposure column '" + h +
                         "' is not of the form x_<exposure>_<t>");
      const std::string name = body.substr(0, us);
      const long t = parse_int(body.substr(us + 1), "data csv header");
      if (t < 1) throw UsageError("data csv: time index must be >= 1 in '" + h + "'");
      int j = -1;
      for (std::size_t e = 0; e < exposures.size(); ++e)
        if (exposures[e] == name) j = int(e);
      if (j < 0) {
        j = int(exposures.size());
        exposures.push_back(name);
      }
      xcols.emplace_back(j, int(t) - 1);
    } else {
      throw UsageError("data csv: unrecognized column '" + h + "'");
    }
  }
  if (exposures.empty()) throw UsageError("data csv: no exposure columns");
  const int p = int(exposures.size());
  int T = 0;
  for (const auto& [j, t] : xcols) T = std::max(T, t + 1);
  // Every exposure must carry each time 1..T exactly once.
  std::vector<std::vector<int>> seen(p, std::vector<int>(T, 0));
  for (const auto& [j, t] : xcols) ++seen[j][t];
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t)
      if (seen[j][t] != 1)
        throw UsageError("data csv: exposure '" + exposures[j] + "' must have time " +
                         std::to_string(t + 1) + " exactly once");

  ExposureDataset data;
  data.n = int(lines.size()) - 1;
  data.p = p;
  data.T = T;
  data.exposure_names = exposures;
  data.covariate_names = covariates;
  data.y.resize(data.n);
  data.x.resize(data.n, Eigen::Index(p) * T);
  data.z.resize(data.n, Eigen::Index(covariates.size()));
  for (int i = 0; i < data.n; ++i) {
    const int lineno = i + 2;
    const auto row = split_row(lines[std::size_t(i) + 1], lineno);
    if (row.size() != header.size())
      throw UsageError("data csv line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(row.size()));
    const std::string where = "data csv line " + std::to_string(lineno);
    parse_int(row[0], where);  // id is informational; only check it parses
    data.y[i] = parse_double(row[1], where);
    std::size_t c = 2;
    for (std::size_t k = 0; k < covariates.size(); ++k, ++c)
      data.z(i, Eigen::Index(k)) = parse_double(row[c], where);
    for (const auto& [j, t] : xcols) {
      if (row[c].empty()) {
        data.x(i, data.xcol(j, t)) = std::numeric_limits<double>::quiet_NaN();
        data.mask.push_back({i, j, t});
      } else {
        data.x(i, data.xcol(j, t)) = parse_double(row[c], where);
      }
      ++c;
    }
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// truth.csv: term,value.  Terms use the same labels as effects.csv so the two
// files can be joined directly: main:<exp>@<t>, int:<a>:<b> (reportable scale,
// off-diagonals doubled), cum:<exp>, plus alpha0.

inline void write_truth_csv(std::ostream& os, const SimTruth& truth,
                            const std::vector<std::string>& exposures) {
  using csv_detail::fmt;
  if (int(exposures.size()) != truth.p)
    throw UsageError("write_truth_csv: exposure names length != p");
  csv_detail::write_row(os, {"term", "value"});
  csv_detail::write_row(os, {"alpha0", fmt(truth.alpha0)});
  for (int j = 0; j < truth.p; ++j)
    for (int t = 0; t < truth.T; ++t)
      csv_detail::write_row(os, {"main:" + label_main(exposures[j], t),
                                 fmt(truth.alpha[Eigen::Index(j) * truth.T + t])});
  const int d = truth.p * truth.T;
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      const std::string la =
          label_main(exposures[a / truth.T], a % truth.T);
      const std::string lb =
          label_main(exposures[b / truth.T], b % truth.T);
      csv_detail::write_row(
          os, {"int:" + la + ":" + lb,
               fmt(reportable_interaction(truth.gamma, a, b))});
    }
  for (int j = 0; j < truth.p; ++j)
    csv_detail::write_row(os, {"cum:" + exposures[j], fmt(truth.cumulative[j])});
}

// ---------------------------------------------------------------------------
// draws.csv

inline void write_draws_csv(std::ostream& os, const PosteriorDraws& draws) {
  using csv_detail::fmt;
  std::vector<std::string> header = {"chain",        "iter",
                                     "treedepth__",  "divergent__",
                                     "accept_stat__", "stepsize__"};
  header.insert(header.end(), draws.names.begin(), draws.names.end());
  csv_detail::write_row(os, header);
  for (int c = 0; c < draws.n_chains(); ++c) {
    const Mat& ch = draws.chains[std::size_t(c)];
    for (int s = 0; s < ch.rows(); ++s) {
      const DrawStats& st = draws.stats[std::size_t(c)][std::size_t(s)];
      std::vector<std::string> row = {std::to_string(c + 1),
                                      std::to_string(s + 1),
                                      std::to_string(st.treedepth),
                                      st.divergent ? "1" : "0",
                                      fmt(st.accept_stat),
                                      fmt(st.stepsize)};
      for (int k = 0; k < ch.cols(); ++k) row.push_back(fmt(ch(s, k)));
      csv_detail::write_row(os, row);
    }
  }
}

inline PosteriorDraws read_draws_csv(std::istream& is) {
  using namespace csv_detail;
  const auto lines = read_lines(is);
  if (lines.empty()) throw UsageError("draws csv: empty file");
  const auto header = split_row(lines[0], 1);
  const std::vector<std::string> fixed = {"chain",        "iter",
                                          "treedepth__",  "divergent__",
                                          "accept_stat__", "stepsize__"};
  if (header.size() < fixed.size() + 1)
    throw UsageError("draws csv: header too short");
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (header[i] != fixed[i])
      throw UsageError("draws csv: column " + std::to_string(i + 1) + " must be " +
                       fixed[i]);
  PosteriorDraws out;
  out.names.assign(header.begin() + long(fixed.size()), header.end());
  const int dim = int(out.names.size());

  std::vector<std::vector<Vec>> rows_by_chain;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const int lineno = int(li) + 1;
    const std::string where = "draws csv line " + std::to_string(lineno);
    const auto row = split_row(lines[li], lineno);
    if (row.size() != header.size())
      throw UsageError(where + ": expected " + std::to_string(header.size()) +
                       " fields");
    const long chain = parse_int(row[0], where);
    if (chain < 1) throw UsageError(where + ": chain index must be >= 1");
    if (std::size_t(chain) > rows_by_chain.size()) {
      if (std::size_t(chain) != rows_by_chain.size() + 1)
        throw UsageError(where + ": chain indices must be contiguous from 1");
      rows_by_chain.emplace_back();
      out.stats.emplace_back();
    }
    const long iter = parse_int(row[1], where);
    if (iter != long(rows_by_chain[std::size_t(chain) - 1].size()) + 1)
      throw UsageError(where + ": iter must count 1,2,... within each chain");
    DrawStats st;
    st.treedepth = int(parse_int(row[2], where));
    const long dv = parse_int(row[3], where);
    if (dv != 0 && dv != 1) throw UsageError(where + ": divergent__ must be 0 or 1");
    st.divergent = dv == 1;
    st.accept_stat = parse_double(row[4], where);
    st.stepsize = parse_double(row[5], where);
    Vec v(dim);
    for (int k = 0; k < dim; ++k)
      v[k] = parse_double(row[std::size_t(k) + 6], where);
    rows_by_chain[std::size_t(chain) - 1].push_back(std::move(v));
    out.stats[std::size_t(chain) - 1].push_back(st);
  }
  if (rows_by_chain.empty()) throw UsageError("draws csv: no draws");
  const std::size_t n = rows_by_chain[0].size();
  for (const auto& ch : rows_by_chain)
    if (ch.size() != n)
      throw UsageError("draws csv: chains must have equal lengths");
  for (const auto& ch : rows_by_chain) {
    Mat m(Eigen::Index(n), dim);
    for (std::size_t s = 0; s < n; ++s) m.row(Eigen::Index(s)) = ch[s];
    out.chains.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// diagnostics.csv

inline void write_diagnostics_csv(std::ostream& os,
                                  const std::vector<ParamDiagnostics>& rows,
                                  int total_divergent) {
  using csv_detail::fmt;
  csv_detail::write_row(os, {"name", "rhat", "ess_bulk", "ess_tail"});
  for (const auto& r : rows)
    csv_detail::write_row(os, {r.name, fmt(r.rhat), fmt(r.ess_bulk), fmt(r.ess_tail)});
  csv_detail::write_row(os, {"__divergent_total__", std::to_string(total_divergent),
                             "", ""});
}

// ---------------------------------------------------------------------------
// induced.csv.  One row per posterior draw.  gamma[r,c] columns hold the raw
// entry (r,c), 1-based with r <= c, row-major over the upper triangle; the
// matrix is symmetric so this is lossless.

inline void write_induced_csv(std::ostream& os,
                              const std::vector<InducedCoefficients>& draws,
                              const std::vector<std::string>& exposures, int T) {
  using csv_detail::fmt;
  if (draws.empty()) throw UsageError("write_induced_csv: no draws");
  const int p = int(exposures.size());
  const int d = p * T;
  if (draws[0].alpha.size() != d)
    throw UsageError("write_induced_csv: alpha length != p*T");
  std::vector<std::string> header = {"draw", "alpha0"};
  for (int j = 0; j < p; ++j)
    for (int t = 0; t < T; ++t)
      header.push_back("alpha[" + label_main(exposures[j], t) + "]");
  for (int r = 0; r < d; ++r)
    for (int c = r; c < d; ++c)
      header.push_back("gamma[" + std::to_string(r + 1) + "," +
                       std::to_string(c + 1) + "]");
  csv_detail::write_row(os, header);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const InducedCoefficients& ic = draws[i];
    if (ic.alpha.size() != d || ic.gamma.rows() != d || ic.gamma.cols() != d)
      throw UsageError("write_induced_csv: draw " + std::to_string(i + 1) +
                       " has inconsistent dimensions");
    std::vector<std::string> row = {std::to_string(i + 1), fmt(ic.alpha0)};
    for (int k = 0; k < d; ++k) row.push_back(fmt(ic.alpha[k]));
    for (int r = 0; r < d; ++r)
      for (int c = r; c < d; ++c) row.push_back(fmt(ic.gamma(r, c)));
    csv_detail::write_row(os, row);
  }
}

struct InducedTable {
  std::vector<InducedCoefficients> draws;
  std::vector<std::string> exposure_names;
  int p = 0, T = 0;
};

inline InducedTable read_induced_csv(std::istream& is) {
  using namespace csv_detail;
  const auto lines = read_lines(is);
  if (lines.empty()) throw UsageError("induced csv: empty file");
  const auto header = split_row(lines[0], 1);
  if (header.size() < 3 || header[0] != "draw" || header[1] != "alpha0")
    throw UsageError("induced csv: header must start with draw,alpha0");

  InducedTable out;
  std::size_t c = 2;
  std::vector<int> times;
  while (c < header.size() && header[c].rfind("alpha[", 0) == 0) {
    const std::string& h = header[c];
    if (h.back() != ']')
      throw UsageError("induced csv: malformed column '" + h + "'");
    const std::string body = h.substr(6, h.size() - 7);
    const std::size_t at = body.rfind('@');
    if (at == std::string::npos || at == 0)
      throw UsageError("induced csv: malformed column '" + h + "'");
    const std::string name = body.substr(0, at);
    const long t = parse_int(body.substr(at + 1), "induced csv header");
    if (t < 1) throw UsageError("induced csv: bad time in '" + h + "'");
    if (out.exposure_names.empty() || out.exposure_names.back() != name) {
      for (const auto& seen : out.exposure_names)
        if (seen == name)
          throw UsageError("induced csv: exposure '" + name + "' columns not grouped");
      out.exposure_names.push_back(name);
    }
    times.push_back(int(t));
    ++c;
  }
  out.p = int(out.exposure_names.size());
  if (out.p == 0) throw UsageError("induced csv: no alpha columns");
  if (times.size() % out.exposure_names.size() != 0)
    throw UsageError("induced csv: alpha columns not a p*T grid");
  out.T = int(times.size()) / out.p;
  for (int j = 0; j < out.p; ++j)
    for (int t = 0; t < out.T; ++t)
      if (times[std::size_t(j) * out.T + t] != t + 1)
        throw UsageError("induced csv: alpha columns must run t=1..T per exposure");
  const int d = out.p * out.T;
  // Upper-triangle gamma columns in write order.
  for (int r = 0; r < d; ++r)
    for (int cc = r; cc < d; ++cc) {
      if (c >= header.size())
        throw UsageError("induced csv: missing gamma columns");
      const std::string want = "gamma[" + std::to_string(r + 1) + "," +
                               std::to_string(cc + 1) + "]";
      if (header[c] != want)
        throw UsageError("induced csv: expected column " + want + ", got '" +
                         header[c] + "'");
      ++c;
    }
  if (c != header.size())
    throw UsageError("induced csv: unexpected trailing column '" + header[c] + "'");

  for (std::size_t li = 1; li < lines.size(); ++li) {
    const int lineno = int(li) + 1;
    const std::string where = "induced csv line " + std::to_string(lineno);
    const auto row = split_row(lines[li], lineno);
    if (row.size() != header.size())
      throw UsageError(where + ": expected " + std::to_string(header.size()) +
                       " fields");
    if (parse_int(row[0], where) != long(li))
      throw UsageError(where + ": draw numbers must count 1,2,...");
    InducedCoefficients ic;
    ic.alpha0 = parse_double(row[1], where);
    ic.alpha.resize(d);
    std::size_t f = 2;
    for (int k = 0; k < d; ++k, ++f) ic.alpha[k] = parse_double(row[f], where);
    ic.gamma = Mat::Zero(d, d);
    for (int r = 0; r < d; ++r)
      for (int cc = r; cc < d; ++cc, ++f) {
        const double v = parse_double(row[f], where);
        ic.gamma(r, cc) = v;
        ic.gamma(cc, r) = v;
      }
    out.draws.push_back(std::move(ic));
  }
  if (out.draws.empty()) throw UsageError("induced csv: no draws");
  return out;
}

// ---------------------------------------------------------------------------
// Small summary tables.

inline void write_effects_csv(std::ostream& os,
                              const std::vector<EffectSummary>& effects) {
  using csv_detail::fmt;
  csv_detail::write_row(os, {"label", "mean", "lo95", "hi95", "excludes_zero"});
  for (const auto& e : effects)
    csv_detail::write_row(os, {e.label, fmt(e.mean), fmt(e.lo), fmt(e.hi),
                               e.excludes_zero ? "1" : "0"});
}

inline void write_surface_csv(std::ostream& os, const std::vector<SurfaceCell>& cells) {
  using csv_detail::fmt;
  csv_detail::write_row(os, {"u", "v", "mean", "lo", "hi", "excludes_zero"});
  for (const auto& s : cells)
    csv_detail::write_row(os, {fmt(s.u), fmt(s.v), fmt(s.mean), fmt(s.lo), fmt(s.hi),
                               s.excludes_zero ? "1" : "0"});
}

inline void write_ppc_csv(std::ostream& os, const std::vector<PpcSubject>& rows) {
  using csv_detail::fmt;
  csv_detail::write_row(os, {"subject", "observed", "mean", "lo95", "hi95", "inside"});
  for (const auto& r : rows)
    csv_detail::write_row(os, {std::to_string(r.i + 1), fmt(r.obs), fmt(r.mean),
                               fmt(r.lo), fmt(r.hi), r.inside ? "1" : "0"});
}

inline void write_cv_csv(std::ostream& os, const CvResult& cv) {
  csv_detail::write_row(os, {"subject", "fold"});
  for (std::size_t i = 0; i < cv.fold_of.size(); ++i)
    csv_detail::write_row(os, {std::to_string(i + 1), std::to_string(cv.fold_of[i])});
  csv_detail::write_row(os, {"__mse__", csv_detail::fmt(cv.mse)});
}

inline void write_imputed_csv(std::ostream& os, const std::vector<ImputedCell>& cells,
                              const std::vector<std::string>& exposures) {
  using csv_detail::fmt;
  csv_detail::write_row(os, {"subject", "exposure", "time", "mean", "lo95", "hi95"});
  for (const auto& c : cells) {
    if (c.j < 0 || c.j >= int(exposures.size()))
      throw UsageError("write_imputed_csv: exposure index out of range");
    csv_detail::write_row(os, {std::to_string(c.i + 1), exposures[std::size_t(c.j)],
                               std::to_string(c.t + 1), fmt(c.mean), fmt(c.lo),
                               fmt(c.hi)});
  }
}

// metrics.csv: one row per (model, replicate) plus an "avg" row per model.
struct MetricsRecord {
  std::string rep;     // "1", "2", ... or "avg"
  std::string status;  // "ok" or "failed"
  MetricsRow row;
};

inline void write_metrics_csv(std::ostream& os,
                              const std::vector<MetricsRecord>& records) {
  using csv_detail::fmt;
  csv_detail::write_row(os, {"model", "rep", "status", "main_mse", "int_mse",
                             "main_cov", "int_cov", "main_tp", "main_tn", "ce_mse",
                             "ce_cov", "ce_tp", "ce_tn"});
  for (const auto& r : records)
    csv_detail::write_row(
        os, {r.row.model, r.rep, r.status, fmt(r.row.main_mse), fmt(r.row.int_mse),
             fmt(r.row.main_cov), fmt(r.row.int_cov), fmt(r.row.main_tp),
             fmt(r.row.main_tn), fmt(r.row.ce_mse), fmt(r.row.ce_cov),
             fmt(r.row.ce_tp), fmt(r.row.ce_tn)});
}

// ---------------------------------------------------------------------------
// Effect-group definitions: one group per line, "LABEL = member, member, ...".
// A member is an exposure name (all T times) or exposure@t (one time).  Blank
// lines and lines starting with # are skipped.

struct EffectGroup {
  std::string label;
  std::vector<std::pair<int, int>> subset;  // (exposure, time), 0-based
};

namespace csv_detail {

// Expand a comma-separated member list against the exposure grid; bare names
// expand to all T times.  Duplicates collapse.
inline std::vector<std::pair<int, int>> resolve_members(
    const std::string& list, const std::vector<std::string>& exposures, int T,
    const std::string& where) {
  std::vector<std::pair<int, int>> subset;
  auto add = [&](int j, int t) {
    for (const auto& s : subset)
      if (s.first == j && s.second == t) return;
    subset.emplace_back(j, t);
  };
  std::stringstream ss(list);
  std::string member;
  bool any = false;
  while (std::getline(ss, member, ',')) {
    any = true;
    const auto [name, t] = parse_member(member, where);
    const int j = exposure_index(name, exposures, where);
    if (t < 0) {
      for (int tt = 0; tt < T; ++tt) add(j, tt);
    } else {
      if (t >= T)
        throw UsageError(where + ": time " + std::to_string(t + 1) +
                         " exceeds T=" + std::to_string(T));
      add(j, t);
    }
  }
  if (!any) throw UsageError(where + ": empty member list");
  return subset;
}

}  // namespace csv_detail

inline std::vector<EffectGroup> parse_groups(std::istream& is,
                                             const std::vector<std::string>& exposures,
                                             int T) {
  using namespace csv_detail;
  std::vector<EffectGroup> groups;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::string where = "groups file line " + std::to_string(lineno);
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw UsageError(where + ": expected LABEL = member[, member...]");
    EffectGroup g;
    g.label = trim(s.substr(0, eq));
    if (g.label.empty()) throw UsageError(where + ": empty group label");
    for (const auto& prior : groups)
      if (prior.label == g.label)
        throw UsageError(where + ": duplicate group label '" + g.label + "'");
    g.subset = resolve_members(s.substr(eq + 1), exposures, T, where);
    groups.push_back(std::move(g));
  }
  if (groups.empty()) throw UsageError("groups file: no groups defined");
  return groups;
}

// ---------------------------------------------------------------------------
// --surface specification: "axis1=<members>;axis2=<members>;grid=lo:hi:step".

struct SurfaceRequest {
  std::vector<std::pair<int, int>> axis1, axis2;
  std::vector<double> grid;
};

inline SurfaceRequest parse_surface_spec(const std::string& spec,
                                         const std::vector<std::string>& exposures,
                                         int T) {
  using namespace csv_detail;
  const std::string where = "surface spec";
  std::string axis1, axis2, grid;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ';')) {
    const std::string s = trim(part);
    if (s.empty()) continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw UsageError(where + ": expected key=value in '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (key == "axis1") axis1 = val;
    else if (key == "axis2") axis2 = val;
    else if (key == "grid") grid = val;
    else throw UsageError(where + ": unknown key '" + key + "'");
  }
  if (axis1.empty() || axis2.empty() || grid.empty())
    throw UsageError(where + ": axis1, axis2, and grid are all required");
  SurfaceRequest out;
  out.axis1 = resolve_members(axis1, exposures, T, where + " axis1");
  out.axis2 = resolve_members(axis2, exposures, T, where + " axis2");
  double lo = 0, hi = 0, step = 0;
  {
    std::stringstream gs(grid);
    std::string a, b, c;
    if (!std::getline(gs, a, ':') || !std::getline(gs, b, ':') ||
        !std::getline(gs, c, ':') || gs.rdbuf()->in_avail() != 0)
      throw UsageError(where + ": grid must be lo:hi:step");
    lo = parse_double(trim(a), where + " grid");
    hi = parse_double(trim(b), where + " grid");
    step = parse_double(trim(c), where + " grid");
  }
  if (!(step > 0)) throw UsageError(where + ": grid step must be positive");
  if (hi < lo) throw UsageError(where + ": grid hi must be >= lo");
  const int count = int(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (int i = 0; i < count; ++i) out.grid.push_back(lo + i * step);
  return out;
}

// ---------------------------------------------------------------------------
// Path wrappers.  Readers throw IoError when the file cannot be opened and
// UsageError when it cannot be parsed; writers throw IoError on failure.

namespace csv_detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path + " for reading");
  return f;
}

}  // namespace csv_detail

template <class WriteFn>
inline void write_csv_file(const std::string& path, WriteFn&& fn) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  fn(f);
  f.flush();
  if (!f) throw IoError("write failed for " + path);
}

inline ExposureDataset read_data_csv_file(const std::string& path) {
  auto f = csv_detail::open_in(path);
  return read_data_csv(f);
}

inline PosteriorDraws read_draws_csv_file(const std::string& path) {
  auto f = csv_detail::open_in(path);
  return read_draws_csv(f);
}

inline InducedTable read_induced_csv_file(const std::string& path) {
  auto f = csv_detail::open_in(path);
  return read_induced_csv(f);
}

}  // namespace lowfr
