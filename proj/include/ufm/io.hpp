#pragma once

// File formats: JSON experiment configs, CSV traces, feature/weight matrices
// (CSV or raw little-endian binary). Layouts are documented in docs/file_formats.md.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufm/metrics.hpp"
#include "ufm/optim.hpp"

namespace ufm {

using json = nlohmann::json;

/// Malformed or inconsistent input file / configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- number formatting -----------------------------------------------------

/// 17 significant digits: enough to round-trip any double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
  if (used != s.size()) throw ConfigError("trailing characters in number: '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

// ---- experiment configuration ---------------------------------------------

struct ExperimentConfig {
  ModelVariant variant = ModelVariant::PlainBiasFree;
  ProblemDims dims;
  Hyperparams hyper;
  OptimConfig optim;
  bool center = false;  // NC2-ETF centering in reports
  std::string output_path = "ufm_run";
  std::uint64_t seed = 0;
};

namespace detail {

inline void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  return obj.contains(key) ? get_field<T>(obj, key, where) : fallback;
}

inline double positive_field(const json& obj, const char* key, const std::string& where) {
  const double v = get_field<double>(obj, key, where);
  if (!(v > 0.0) || !std::isfinite(v))
    throw ConfigError(where + "." + key + " must be positive and finite");
  return v;
}

inline ProblemDims parse_dims(const json& j, bool need_n) {
  if (!j.is_object()) throw ConfigError("dims must be an object");
  reject_unknown_keys(j, {"K", "d", "n"}, "dims");
  const int K = get_field<int>(j, "K", "dims");
  const int d = get_field<int>(j, "d", "dims");
  const int n = need_n ? get_field<int>(j, "n", "dims") : get_or<int>(j, "n", 1, "dims");
  try {
    return ProblemDims(K, d, n);
  } catch (const DimensionError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

/// Parses and validates an experiment config. Throws ConfigError with a diagnostic.
inline ExperimentConfig parse_experiment_config(const json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_keys(j, {"variant", "dims", "hyper", "optim", "metrics", "output_path", "seed"},
                      "config");
  ExperimentConfig cfg;
  const auto vname = get_field<std::string>(j, "variant", "config");
  const auto variant = parse_variant(vname);
  if (!variant) throw ConfigError("config.variant: unknown variant '" + vname + "'");
  cfg.variant = *variant;
  cfg.dims = parse_dims(get_field<json>(j, "dims", "config"), true);

  const json hj = get_field<json>(j, "hyper", "config");
  if (!hj.is_object()) throw ConfigError("hyper must be an object");
  if (is_plain(cfg.variant)) {
    reject_unknown_keys(hj, {"lambda_W", "lambda_H", "lambda_b"}, "hyper");
    cfg.hyper.lambda_W = positive_field(hj, "lambda_W", "hyper");
    cfg.hyper.lambda_H = positive_field(hj, "lambda_H", "hyper");
    switch (cfg.variant) {
      case ModelVariant::PlainBiasFree:
        if (hj.contains("lambda_b"))
          throw ConfigError("hyper.lambda_b is only valid for plain_reg_bias");
        cfg.hyper.bias = BiasMode::bias_free();
        break;
      case ModelVariant::PlainUnregBias:
        if (hj.contains("lambda_b") && get_field<double>(hj, "lambda_b", "hyper") != 0.0)
          throw ConfigError("hyper.lambda_b must be absent or 0 for plain_unreg_bias");
        cfg.hyper.bias = BiasMode::unregularized();
        break;
      default:
        cfg.hyper.bias = BiasMode::regularized(positive_field(hj, "lambda_b", "hyper"));
        break;
    }
  } else {
    reject_unknown_keys(hj, {"lambda_W2", "lambda_W1", "lambda_H1"}, "hyper");
    cfg.hyper.lambda_W2 = positive_field(hj, "lambda_W2", "hyper");
    cfg.hyper.lambda_W1 = positive_field(hj, "lambda_W1", "hyper");
    cfg.hyper.lambda_H1 = positive_field(hj, "lambda_H1", "hyper");
  }

  cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  if (j.contains("optim")) {
    const json& oj = j.at("optim");
    if (!oj.is_object()) throw ConfigError("optim must be an object");
    reject_unknown_keys(oj, {"step_size", "max_iters", "log_every", "grad_tol", "restarts", "init"},
                        "optim");
    auto& o = cfg.optim;
    o.step_size = get_or<double>(oj, "step_size", o.step_size, "optim");
    o.max_iters = get_or<long>(oj, "max_iters", o.max_iters, "optim");
    o.log_every = get_or<long>(oj, "log_every", o.log_every, "optim");
    o.grad_tol = get_or<double>(oj, "grad_tol", o.grad_tol, "optim");
    o.restarts = get_or<int>(oj, "restarts", o.restarts, "optim");
    if (oj.contains("init")) {
      const json& ij = oj.at("init");
      if (!ij.is_object()) throw ConfigError("optim.init must be an object");
      reject_unknown_keys(ij, {"distribution", "scale", "block_scales", "seed"}, "optim.init");
      o.init.distribution = get_or<std::string>(ij, "distribution", o.init.distribution, "optim.init");
      o.init.scale = get_or<double>(ij, "scale", o.init.scale, "optim.init");
      o.init.block_scales =
          get_or<std::vector<double>>(ij, "block_scales", o.init.block_scales, "optim.init");
      if (ij.contains("seed") && !j.contains("seed"))
        cfg.seed = get_field<std::uint64_t>(ij, "seed", "optim.init");
    }
  }
  cfg.optim.init.seed = cfg.seed;
  if (j.contains("metrics")) {
    const json& mj = j.at("metrics");
    reject_unknown_keys(mj, {"center"}, "metrics");
    cfg.center = get_or<bool>(mj, "center", false, "metrics");
  }
  cfg.output_path = get_or<std::string>(j, "output_path", cfg.output_path, "config");

  try {
    cfg.optim.validate();
    const std::size_t blocks = cfg.variant == ModelVariant::PlainBiasFree ? 2 : 3;
    if (!cfg.optim.init.block_scales.empty() && cfg.optim.init.block_scales.size() != blocks)
      throw std::invalid_argument("optim.init.block_scales must have " + std::to_string(blocks) +
                                  " entries");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

/// Normalized echo of a parsed config; parsing it again yields the same config.
inline json to_json(const ExperimentConfig& cfg) {
  json hyper;
  if (is_plain(cfg.variant)) {
    hyper["lambda_W"] = cfg.hyper.lambda_W;
    hyper["lambda_H"] = cfg.hyper.lambda_H;
    if (cfg.variant == ModelVariant::PlainRegBias) hyper["lambda_b"] = cfg.hyper.bias.lambda_b;
  } else {
    hyper["lambda_W2"] = cfg.hyper.lambda_W2;
    hyper["lambda_W1"] = cfg.hyper.lambda_W1;
    hyper["lambda_H1"] = cfg.hyper.lambda_H1;
  }
  json init{{"distribution", cfg.optim.init.distribution}, {"scale", cfg.optim.init.scale}};
  if (!cfg.optim.init.block_scales.empty()) init["block_scales"] = cfg.optim.init.block_scales;
  return json{
      {"variant", variant_name(cfg.variant)},
      {"dims", {{"K", cfg.dims.K}, {"d", cfg.dims.d}, {"n", cfg.dims.n}}},
      {"hyper", hyper},
      {"optim",
       {{"step_size", cfg.optim.step_size},
        {"max_iters", cfg.optim.max_iters},
        {"log_every", cfg.optim.log_every},
        {"grad_tol", cfg.optim.grad_tol},
        {"restarts", cfg.optim.restarts},
        {"init", init}}},
      {"metrics", {{"center", cfg.center}}},
      {"output_path", cfg.output_path},
      {"seed", cfg.seed},
  };
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

// ---- reports ---------------------------------------------------------------

inline json to_json(const NCReport& r) {
  json levels = json::array();
  for (const auto& l : r.levels)
    levels.push_back({{"name", l.name},
                      {"nc1", l.nc1},
                      {"nc2_etf", l.nc2_etf},
                      {"nc2_of", l.nc2_of},
                      {"degenerate", l.degenerate}});
  json out{{"levels", levels}, {"nc3_degenerate", r.nc3_degenerate}};
  out["nc3"] = r.nc3 ? json(*r.nc3) : json(nullptr);
  return out;
}

// ---- CSV traces ------------------------------------------------------------

inline std::string trace_csv_header(const std::vector<std::string>& levels) {
  std::string h = "iter,objective,grad_norm";
  for (const auto& l : levels) h += ",nc1_" + l + ",nc2of_" + l + ",nc2etf_" + l;
  return h + ",nc3";
}

inline std::string trace_to_csv(const Trace& trace, const std::vector<std::string>& levels) {
  std::string out = trace_csv_header(levels) + "\n";
  for (const auto& row : trace.rows) {
    out += std::to_string(row.iteration) + "," + format_double(row.objective) + "," +
           format_double(row.grad_norm);
    for (const auto& name : levels) {
      const LevelMetrics* l = row.report.level(name);
      if (!l) throw std::logic_error("trace row is missing level '" + name + "'");
      out += "," + format_double(l->nc1) + "," + format_double(l->nc2_of) + "," +
             format_double(l->nc2_etf);
    }
    out += "," + format_double(row.report.nc3.value_or(std::nan(""))) + "\n";
  }
  return out;
}

/// Parses a trace written by trace_to_csv. Level names are recovered from the header.
inline Trace trace_from_csv(std::istream& in, std::vector<std::string>* levels_out = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("trace CSV: empty input");
  const auto header = split_csv_line(strip_cr(line));
  if (header.size() < 4 || header[0] != "iter" || header[1] != "objective" ||
      header[2] != "grad_norm" || header.back() != "nc3" || (header.size() - 4) % 3 != 0)
    throw ConfigError("trace CSV: unexpected header");
  std::vector<std::string> levels;
  for (std::size_t c = 3; c + 1 < header.size(); c += 3) {
    const std::string& h = header[c];
    if (h.rfind("nc1_", 0) != 0) throw ConfigError("trace CSV: unexpected column '" + h + "'");
    levels.push_back(h.substr(4));
  }
  Trace trace;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ConfigError("trace CSV: ragged row");
    TraceRow row;
    row.iteration = std::stol(cells[0]);
    row.objective = parse_double(cells[1]);
    row.grad_norm = parse_double(cells[2]);
    for (std::size_t i = 0; i < levels.size(); ++i) {
      LevelMetrics l;
      l.name = levels[i];
      l.nc1 = parse_double(cells[3 + 3 * i]);
      l.nc2_of = parse_double(cells[4 + 3 * i]);
      l.nc2_etf = parse_double(cells[5 + 3 * i]);
      row.report.levels.push_back(l);
    }
    row.report.nc3 = parse_double(cells.back());
    trace.rows.push_back(std::move(row));
  }
  if (levels_out) *levels_out = std::move(levels);
  return trace;
}

// ---- feature and weight matrices -------------------------------------------

struct FeatureFile {
  Matrix H;  // d x N, class-major columns
  ProblemDims dims;
};

namespace detail {

constexpr std::array<char, 8> kFeatureMagic{'U', 'F', 'M', 'F', 'E', 'A', 'T', '1'};
constexpr std::array<char, 8> kMatrixMagic{'U', 'F', 'M', 'M', 'A', 'T', '0', '1'};
constexpr std::size_t kBinaryHeaderBytes = 32;

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f64(std::string& buf, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool is_binary_path(const std::filesystem::path& path) { return path.extension() == ".bin"; }

inline std::vector<double> parse_row(const std::string& line, std::size_t expected,
                                     const std::string& where) {
  const auto cells = split_csv_line(strip_cr(line));
  if (cells.size() != expected)
    throw ConfigError(where + ": expected " + std::to_string(expected) + " values, got " +
                      std::to_string(cells.size()));
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& c : cells) out.push_back(parse_double(c));
  return out;
}

inline std::vector<long> parse_header_ints(const std::string& line, std::size_t count,
                                           const std::string& where) {
  const auto cells = split_csv_line(strip_cr(line));
  if (cells.size() != count) throw ConfigError(where + ": malformed header");
  std::vector<long> out;
  for (const auto& c : cells) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(c, &used);
    } catch (const std::exception&) {
      throw ConfigError(where + ": malformed header");
    }
    if (used != c.size() || v < 1) throw ConfigError(where + ": malformed header");
    out.push_back(v);
  }
  return out;
}

}  // namespace detail

/// CSV: header `d,N,K,n`, then N lines, line j holding the d entries of column j.
/// Binary: 32-byte header ("UFMFEAT1", u32 d, u32 N, u32 K, u32 n, 8 zero bytes) followed
/// by d*N little-endian float64, column by column.
inline FeatureFile read_feature_file(const std::filesystem::path& path) {
  using namespace detail;
  const std::string data = read_all(path);
  long d = 0, N = 0, K = 0, n = 0;
  Matrix H;
  if (is_binary_path(path)) {
    if (data.size() < kBinaryHeaderBytes || !std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), data.begin()))
      throw ConfigError("feature file: bad binary header");
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    d = get_u32(p + 8);
    N = get_u32(p + 12);
    K = get_u32(p + 16);
    n = get_u32(p + 20);
    if (d < 1 || N < 1 || K < 1 || n < 1) throw ConfigError("feature file: zero dimension");
    const std::size_t expect = kBinaryHeaderBytes + 8u * static_cast<std::size_t>(d) * N;
    if (data.size() != expect) throw ConfigError("feature file: payload size mismatch");
    H.resize(d, N);
    for (long j = 0; j < N; ++j)
      for (long i = 0; i < d; ++i)
        H(i, j) = get_f64(p + kBinaryHeaderBytes + 8u * static_cast<std::size_t>(j * d + i));
  } else {
    std::istringstream in(data);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("feature file: empty");
    const auto hdr = parse_header_ints(line, 4, "feature file");
    d = hdr[0], N = hdr[1], K = hdr[2], n = hdr[3];
    H.resize(d, N);
    long j = 0;
    while (std::getline(in, line)) {
      if (strip_cr(line).empty()) continue;
      if (j >= N) throw ConfigError("feature file: more than N columns");
      const auto vals = parse_row(line, static_cast<std::size_t>(d),
                                  "feature file column " + std::to_string(j));
      for (long i = 0; i < d; ++i) H(i, j) = vals[static_cast<std::size_t>(i)];
      ++j;
    }
    if (j != N)
      throw ConfigError("feature file: expected " + std::to_string(N) + " columns, got " +
                        std::to_string(j));
  }
  if (N != K * n) throw ConfigError("feature file: N must equal K*n");
  if (!H.allFinite()) throw ConfigError("feature file: non-finite values");
  return {std::move(H), ProblemDims(static_cast<int>(K), static_cast<int>(d), static_cast<int>(n))};
}

inline void write_feature_file(const std::filesystem::path& path, const Matrix& H,
                               const ProblemDims& dims) {
  using namespace detail;
  require_shape(H, dims.d, dims.N(), "write_feature_file: H");
  std::string buf;
  if (is_binary_path(path)) {
    buf.assign(kFeatureMagic.begin(), kFeatureMagic.end());
    put_u32(buf, static_cast<std::uint32_t>(dims.d));
    put_u32(buf, static_cast<std::uint32_t>(dims.N()));
    put_u32(buf, static_cast<std::uint32_t>(dims.K));
    put_u32(buf, static_cast<std::uint32_t>(dims.n));
    buf.append(8, '\0');
    for (Eigen::Index j = 0; j < H.cols(); ++j)
      for (Eigen::Index i = 0; i < H.rows(); ++i) put_f64(buf, H(i, j));
  } else {
    buf = std::to_string(dims.d) + "," + std::to_string(dims.N()) + "," + std::to_string(dims.K) +
          "," + std::to_string(dims.n) + "\n";
    for (Eigen::Index j = 0; j < H.cols(); ++j) {
      for (Eigen::Index i = 0; i < H.rows(); ++i) {
        if (i) buf += ",";
        buf += format_double(H(i, j));
      }
      buf += "\n";
    }
  }
  write_text_file(path, buf);
}

/// CSV: header `rows,cols`, then one line per row. Binary: "UFMMAT01", u32 rows,
/// u32 cols, 16 zero bytes, then rows*cols little-endian float64, column by column.
inline Matrix read_matrix_file(const std::filesystem::path& path) {
  using namespace detail;
  const std::string data = read_all(path);
  Matrix M;
  if (is_binary_path(path)) {
    if (data.size() < kBinaryHeaderBytes || !std::equal(kMatrixMagic.begin(), kMatrixMagic.end(), data.begin()))
      throw ConfigError("matrix file: bad binary header");
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    const long rows = get_u32(p + 8), cols = get_u32(p + 12);
    if (rows < 1 || cols < 1) throw ConfigError("matrix file: zero dimension");
    if (data.size() != kBinaryHeaderBytes + 8u * static_cast<std::size_t>(rows * cols))
      throw ConfigError("matrix file: payload size mismatch");
    M.resize(rows, cols);
    for (long j = 0; j < cols; ++j)
      for (long i = 0; i < rows; ++i)
        M(i, j) = get_f64(p + kBinaryHeaderBytes + 8u * static_cast<std::size_t>(j * rows + i));
  } else {
    std::istringstream in(data);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("matrix file: empty");
    const auto hdr = parse_header_ints(line, 2, "matrix file");
    M.resize(hdr[0], hdr[1]);
    long r = 0;
    while (std::getline(in, line)) {
      if (strip_cr(line).empty()) continue;
      if (r >= hdr[0]) throw ConfigError("matrix file: too many rows");
      const auto vals = parse_row(line, static_cast<std::size_t>(hdr[1]),
                                  "matrix file row " + std::to_string(r));
      for (long c = 0; c < hdr[1]; ++c) M(r, c) = vals[static_cast<std::size_t>(c)];
      ++r;
    }
    if (r != hdr[0]) throw ConfigError("matrix file: expected " + std::to_string(hdr[0]) + " rows");
  }
  if (!M.allFinite()) throw ConfigError("matrix file: non-finite values");
  return M;
}

inline void write_matrix_file(const std::filesystem::path& path, const Matrix& M) {
  using namespace detail;
  std::string buf;
  if (is_binary_path(path)) {
    buf.assign(kMatrixMagic.begin(), kMatrixMagic.end());
    put_u32(buf, static_cast<std::uint32_t>(M.rows()));
    put_u32(buf, static_cast<std::uint32_t>(M.cols()));
    buf.append(16, '\0');
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      for (Eigen::Index i = 0; i < M.rows(); ++i) put_f64(buf, M(i, j));
  } else {
    buf = std::to_string(M.rows()) + "," + std::to_string(M.cols()) + "\n";
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      for (Eigen::Index j = 0; j < M.cols(); ++j) {
        if (j) buf += ",";
        buf += format_double(M(i, j));
      }
      buf += "\n";
    }
  }
  write_text_file(path, buf);
}

}  // namespace ufm
