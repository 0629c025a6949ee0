#include "vsgp/io.hpp"

#include <charconv>
#include <limits>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace vsgp {

namespace {

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec == std::errc() && res.ptr == last) return true;
  // from_chars does not accept inf/nan spellings from every writer.
  if (s == "inf" || s == "+inf") {
    v = std::numeric_limits<double>::infinity();
    return true;
  }
  if (s == "-inf") {
    v = -std::numeric_limits<double>::infinity();
    return true;
  }
  if (s == "nan") {
    v = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  return false;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Matrix read_csv_matrix(const std::string& path, std::vector<std::string>* header) {
  std::ifstream in = open_in(path);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  bool first = true;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    std::vector<double> vals(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size() && numeric; ++i) numeric = parse_double(cells[i], vals[i]);
    if (first) {
      first = false;
      width = cells.size();
      if (!numeric) {
        if (header) *header = cells;
        continue;
      }
    }
    if (!numeric) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-numeric value");
    if (cells.size() != width) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(vals));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < width; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

void write_csv_matrix(const std::string& path, const Matrix& values, const std::vector<std::string>& header) {
  std::ofstream out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  if (!header.empty()) out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << format_double(values(r, c));
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::string& path) {
  const Matrix m = read_csv_matrix(path);
  if (m.cols() < 2) throw std::runtime_error(path + ": need at least one input column and a response");
  Dataset d;
  d.X = m.leftCols(m.cols() - 1);
  d.y = m.col(m.cols() - 1);
  return d;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < data.dim(); ++j) header.push_back("x_" + std::to_string(j + 1));
  header.push_back("y");
  Matrix m(data.size(), data.dim() + 1);
  m.leftCols(data.dim()) = data.X;
  m.col(data.dim()) = data.y;
  write_csv_matrix(path, m, header);
}

Locations read_locations_csv(const std::string& path) { return read_csv_matrix(path); }

std::vector<std::string> chain_columns(Eigen::Index D, Eigen::Index M) {
  std::vector<std::string> c{"iter", "log_sigma2_eps"};
  for (Eigen::Index d = 0; d < D; ++d) c.push_back("log_lambda_" + std::to_string(d + 1));
  for (Eigen::Index m = 0; m < M; ++m) c.push_back("xi_" + std::to_string(m + 1));
  for (Eigen::Index m = 0; m < M; ++m) c.push_back("zeta_" + std::to_string(m + 1));
  for (const char* s : {"sign_rho", "sign_xi", "sign_zeta", "sign_phi", "log_abs_E", "acc_rho", "acc_xi",
                        "acc_zeta", "acc_phi"}) {
    c.emplace_back(s);
  }
  return c;
}

ChainCsvWriter::ChainCsvWriter(const std::string& path, Eigen::Index D, Eigen::Index M,
                               const std::string& config_hash, int burn_in, int thin, bool is_signed)
    : out_(open_out(path)), D_(D), M_(M) {
  out_ << "# config_hash: " << config_hash << '\n';
  out_ << "# burn_in: " << burn_in << '\n';
  out_ << "# thin: " << thin << '\n';
  out_ << "# signed: " << (is_signed ? 1 : 0) << '\n';
  const auto cols = chain_columns(D, M);
  for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
  out_ << '\n';
}

void ChainCsvWriter::write(const ChainRow& r) {
  if (r.state.log_lambda.size() != D_ || r.state.xi.size() != M_ || r.state.zeta.size() != M_) {
    throw DimensionMismatch("chain row does not match the CSV layout");
  }
  out_ << r.iteration << ',' << format_double(r.state.log_sigma2_eps);
  for (Eigen::Index d = 0; d < D_; ++d) out_ << ',' << format_double(r.state.log_lambda[d]);
  for (Eigen::Index m = 0; m < M_; ++m) out_ << ',' << format_double(r.state.xi[m]);
  for (Eigen::Index m = 0; m < M_; ++m) out_ << ',' << format_double(r.state.zeta[m]);
  out_ << ',' << r.sign_rho << ',' << r.sign_xi << ',' << r.sign_zeta << ',' << r.sign_phi << ','
       << format_double(r.log_abs_E) << ',' << int(r.acc_rho) << ',' << int(r.acc_xi) << ',' << int(r.acc_zeta)
       << ',' << int(r.acc_phi) << '\n';
  if (!out_) throw std::runtime_error("chain CSV write failed");
}

void write_chain_csv(const std::string& path, const SignedChain& chain, const std::string& config_hash) {
  if (chain.rows.empty()) throw std::invalid_argument("empty chain");
  const auto& s = chain.rows.front().state;
  ChainCsvWriter w(path, s.log_lambda.size(), s.xi.size(), config_hash, chain.burn_in, chain.thin,
                   chain.is_signed);
  for (const auto& r : chain.rows) w.write(r);
}

SignedChain read_chain_csv(const std::string& path, std::string* config_hash) {
  std::ifstream in = open_in(path);
  SignedChain chain;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = line.substr(2, colon - 2);
      const std::string value = line.substr(colon + 1 + (line.size() > colon + 1 && line[colon + 1] == ' '));
      if (key == "config_hash" && config_hash) *config_hash = value;
      if (key == "burn_in") chain.burn_in = std::stoi(value);
      if (key == "thin") chain.thin = std::stoi(value);
      if (key == "signed") chain.is_signed = std::stoi(value) != 0;
      continue;
    }
    header = split(line);
    break;
  }
  Eigen::Index D = 0;
  Eigen::Index M = 0;
  for (const auto& h : header) {
    if (h.rfind("log_lambda_", 0) == 0) ++D;
    if (h.rfind("xi_", 0) == 0) ++M;
  }
  if (header != chain_columns(D, M)) throw std::runtime_error(path + ": unexpected chain header");
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw std::runtime_error(path + ": ragged chain row " + std::to_string(lineno));
    std::vector<double> v(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!parse_double(cells[i], v[i])) throw std::runtime_error(path + ": bad value in row " + std::to_string(lineno));
    }
    ChainRow r;
    std::size_t k = 0;
    r.iteration = static_cast<long>(v[k++]);
    r.state.log_sigma2_eps = v[k++];
    r.state.log_lambda.resize(D);
    for (Eigen::Index d = 0; d < D; ++d) r.state.log_lambda[d] = v[k++];
    r.state.xi.resize(M);
    for (Eigen::Index m = 0; m < M; ++m) r.state.xi[m] = v[k++];
    r.state.zeta.resize(M);
    for (Eigen::Index m = 0; m < M; ++m) r.state.zeta[m] = v[k++];
    r.sign_rho = static_cast<int>(v[k++]);
    r.sign_xi = static_cast<int>(v[k++]);
    r.sign_zeta = static_cast<int>(v[k++]);
    r.sign_phi = static_cast<int>(v[k++]);
    r.log_abs_E = v[k++];
    r.acc_rho = v[k++] != 0.0;
    r.acc_xi = v[k++] != 0.0;
    r.acc_zeta = v[k++] != 0.0;
    r.acc_phi = v[k++] != 0.0;
    chain.rows.push_back(std::move(r));
  }
  return chain;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace vsgp
