#include "dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace hctb {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

double parse_number(const std::string& cell, const std::string& col, std::size_t row) {
  double v;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    fail(Status::parse, "row " + std::to_string(row) + ", column '" + col +
                            "': not a finite number: '" + cell + "'");
  }
  return v;
}

int parse_binary(const std::string& cell, const std::string& col, std::size_t row) {
  if (is_missing(cell)) {
    fail(Status::parse, "row " + std::to_string(row) + ", column '" + col + "': missing value");
  }
  double v = parse_number(cell, col, row);
  if (v != 0.0 && v != 1.0) {
    fail(Status::validation,
         "row " + std::to_string(row) + ", column '" + col + "': non-binary value '" + cell + "'");
  }
  return static_cast<int>(v);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

int TrialDataset::n_rct() const { return s.sum(); }
int TrialDataset::n_ec() const { return n() - n_rct(); }
int TrialDataset::n_treated() const { return (s.array() * a.array()).sum(); }
int TrialDataset::n_control() const { return (s.array() * (1 - a.array())).sum(); }

void TrialDataset::validate() const {
  const int nn = n();
  if (nn == 0) fail(Status::validation, "empty dataset");
  if (a.size() != nn || s.size() != nn || x.rows() != nn) {
    fail(Status::validation, "column lengths disagree");
  }
  if (static_cast<int>(covariate_names.size()) != p()) {
    fail(Status::validation, "covariate name count does not match covariate columns");
  }
  for (int i = 0; i < nn; ++i) {
    if (y[i] != 0 && y[i] != 1) fail(Status::validation, "y must be 0/1");
    if (a[i] != 0 && a[i] != 1) fail(Status::validation, "a must be 0/1");
    if (s[i] != 0 && s[i] != 1) fail(Status::validation, "s must be 0/1");
    if (s[i] == 0 && a[i] == 1) {
      fail(Status::validation, "EC unit is treated (row " + std::to_string(i) + ")");
    }
  }
  if (!x.allFinite()) fail(Status::validation, "non-finite covariate value");
  if (n_rct() < 2 || n_treated() < 1 || n_control() < 1) {
    fail(Status::validation, "need at least one treated and one control RCT unit");
  }
}

TrialDataset parse_csv(const std::string& text, const ColumnMap& schema,
                       bool validate) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(Status::parse, "empty file");
  const std::vector<std::string> header = split_line(line);

  auto find_col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(Status::parse, "missing required column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ci_y = find_col(schema.y);
  const std::size_t ci_a = find_col(schema.a);
  const std::size_t ci_s = find_col(schema.s);

  std::vector<std::size_t> cov_idx;
  std::vector<std::string> cov_names;
  if (schema.covariates.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j != ci_y && j != ci_a && j != ci_s) {
        cov_idx.push_back(j);
        cov_names.push_back(header[j]);
      }
    }
  } else {
    for (const auto& name : schema.covariates) {
      cov_idx.push_back(find_col(name));
      cov_names.push_back(name);
    }
  }

  std::vector<int> ys, as, ss;
  std::vector<std::vector<double>> cols(cov_idx.size());
  std::vector<std::vector<std::size_t>> missing(cov_idx.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      fail(Status::parse, "row " + std::to_string(row) + ": expected " +
                              std::to_string(header.size()) + " cells, got " +
                              std::to_string(cells.size()));
    }
    ys.push_back(parse_binary(cells[ci_y], schema.y, row));
    as.push_back(parse_binary(cells[ci_a], schema.a, row));
    ss.push_back(parse_binary(cells[ci_s], schema.s, row));
    for (std::size_t k = 0; k < cov_idx.size(); ++k) {
      const std::string& cell = cells[cov_idx[k]];
      if (is_missing(cell)) {
        missing[k].push_back(cols[k].size());
        cols[k].push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        cols[k].push_back(parse_number(cell, cov_names[k], row));
      }
    }
  }
  if (ys.empty()) fail(Status::validation, "empty dataset");

  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (missing[k].empty()) continue;
    std::vector<double> observed;
    for (double v : cols[k]) {
      if (!std::isnan(v)) observed.push_back(v);
    }
    if (observed.empty()) {
      fail(Status::validation, "covariate column '" + cov_names[k] + "' has no observed values");
    }
    const double fill = median(observed);
    for (std::size_t i : missing[k]) cols[k][i] = fill;
  }

  const int n = static_cast<int>(ys.size());
  const int p = static_cast<int>(cols.size());
  TrialDataset ds;
  ds.x.resize(n, p);
  ds.y.resize(n);
  ds.a.resize(n);
  ds.s.resize(n);
  for (int i = 0; i < n; ++i) {
    ds.y[i] = ys[i];
    ds.a[i] = as[i];
    ds.s[i] = ss[i];
    for (int j = 0; j < p; ++j) ds.x(i, j) = cols[j][i];
  }
  ds.covariate_names = cov_names;
  if (validate) ds.validate();
  return ds;
}

TrialDataset load_csv(const std::string& path, const ColumnMap& schema,
                      bool validate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Status::io, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema, validate);
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string to_csv(const TrialDataset& ds) {
  std::string out = "y,a,s";
  for (const auto& name : ds.covariate_names) out += "," + name;
  out += "\n";
  for (int i = 0; i < ds.n(); ++i) {
    out += std::to_string(ds.y[i]) + "," + std::to_string(ds.a[i]) + "," + std::to_string(ds.s[i]);
    for (int j = 0; j < ds.p(); ++j) out += "," + format_double(ds.x(i, j));
    out += "\n";
  }
  return out;
}

void write_csv(const TrialDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Status::io, "cannot open '" + path + "' for writing");
  out << to_csv(ds);
  if (!out) fail(Status::io, "write failed for '" + path + "'");
}

TrialDataset from_arrays(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                         const Eigen::VectorXi& a, const Eigen::VectorXi& s,
                         std::vector<std::string> covariate_names) {
  TrialDataset ds;
  ds.x = x;
  ds.y = y;
  ds.a = a;
  ds.s = s;
  if (covariate_names.empty()) {
    for (int j = 1; j <= x.cols(); ++j) covariate_names.push_back("x" + std::to_string(j));
  }
  ds.covariate_names = std::move(covariate_names);
  ds.validate();
  return ds;
}

TrialDataset subset_rows(const TrialDataset& ds, const std::vector<int>& rows) {
  TrialDataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.x.resize(m, ds.x.cols());
  out.y.resize(m);
  out.a.resize(m);
  out.s.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const int i = rows[static_cast<std::size_t>(k)];
    if (i < 0 || i >= ds.n())
      fail(Status::invalid_argument, "subset_rows: row out of range");
    out.x.row(k) = ds.x.row(i);
    out.y[k] = ds.y[i];
    out.a[k] = ds.a[i];
    out.s[k] = ds.s[i];
  }
  out.covariate_names = ds.covariate_names;
  return out;
}

double ess(const std::vector<double>& weights) {
  double sum = 0, sumsq = 0;
  for (double w : weights) {
    if (w < 0) fail(Status::invalid_argument, "ess: negative weight");
    sum += w;
    sumsq += w * w;
  }
  if (sumsq == 0) fail(Status::invalid_argument, "ess: all weights zero");
  return sum * sum / sumsq;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = x;
  for (int j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().mean();
    const double sd = std::sqrt(var);
    z.col(j) = (x.col(j).array() - mean) / (sd > 0 ? sd : 1.0);
  }
  return z;
}

std::vector<int> nn_match(const TrialDataset& rct, const TrialDataset& ec_pool, int ratio) {
  if (ratio < 1) fail(Status::invalid_argument, "nn_match: ratio must be >= 1");
  const int nr = rct.n();
  const int ne = ec_pool.n();
  if (rct.p() != ec_pool.p()) fail(Status::invalid_argument, "nn_match: covariate dimensions differ");
  if (static_cast<long>(ratio) * nr > ne) fail(Status::invalid_argument, "nn_match: pool exhausted");

  Eigen::MatrixXd pooled(nr + ne, rct.p());
  pooled << rct.x, ec_pool.x;
  const Eigen::MatrixXd z = standardize(pooled);
  const auto zr = z.topRows(nr);
  const auto ze = z.bottomRows(ne);

  std::vector<bool> taken(ne, false);
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(ratio) * nr);
  for (int i = 0; i < nr; ++i) {
    for (int k = 0; k < ratio; ++k) {
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < ne; ++j) {
        if (taken[j]) continue;
        const double d = (ze.row(j) - zr.row(i)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      taken[best] = true;
      selected.push_back(best);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace hctb
