#pragma once
// Serialization: CSV emission with 17-significant-digit floats, JSON run
// manifests, and a binary probability-table cache that round-trips bitwise.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gkpsense/backaction.hpp"
#include "gkpsense/errors.hpp"
#include "gkpsense/estimation.hpp"

namespace gkpsense {

// All floats are printed with 17 significant digits, enough to round-trip
// an IEEE double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// CSV

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path)
      : path_(path.string()), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path_ + " for writing");
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_);
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  CsvWriter w(path);
  w.row(header);
  for (const auto& r : rows) w.row(r);
  w.close();
}

// One row per (grid point, bitstring); columns x0, bitstring, probability.
inline void write_probability_table_csv(const ProbabilityTable& table,
                                        const std::filesystem::path& path) {
  CsvWriter w(path);
  w.row({"x0", "bitstring", "probability"});
  for (int i = 0; i < table.grid.size(); ++i) {
    for (int b = 0; b < table.outcomes(); ++b) {
      w.row({format_double(table.grid.values(i)),
             bitstring_label(b, table.t_rounds),
             format_double(table.probs(i, b))});
    }
  }
  w.close();
}

// Per-repeat summary rows: repeat (1-based), quadrature, mse, stderr.
inline void write_run_record_csv(const RunRecord& record,
                                 const std::filesystem::path& path) {
  CsvWriter w(path);
  w.row({"repeat", "quadrature", "mse", "stderr"});
  for (std::size_t r = 0; r < record.repeats.size(); ++r) {
    const RepeatSummary& s = record.repeats[r];
    w.row({std::to_string(r + 1), "q", format_double(s.mse_q),
           format_double(s.stderr_q)});
    w.row({std::to_string(r + 1), "p", format_double(s.mse_p),
           format_double(s.stderr_p)});
  }
  w.close();
}

// Raw per-sample draws and outcomes, one row per (sample, repeat).
inline void write_run_record_samples_csv(const RunRecord& record,
                                         const std::filesystem::path& path) {
  const int t = record.config.t_rounds;
  CsvWriter w(path);
  std::vector<std::string> header = {"sample", "repeat", "true_q", "true_p",
                                     "bits_q", "bits_p", "est_q", "est_p"};
  const bool with_fidelity = record.fidelity.size() > 0;
  if (with_fidelity) header.push_back("fidelity");
  w.row(header);
  for (Eigen::Index s = 0; s < record.true_q.rows(); ++s) {
    for (Eigen::Index r = 0; r < record.true_q.cols(); ++r) {
      std::vector<std::string> cells = {
          std::to_string(s),
          std::to_string(r + 1),
          format_double(record.true_q(s, r)),
          format_double(record.true_p(s, r)),
          bitstring_label(static_cast<int>(record.bits_q(s, r)), t),
          bitstring_label(static_cast<int>(record.bits_p(s, r)), t),
          format_double(record.est_q(s, r)),
          format_double(record.est_p(s, r))};
      if (with_fidelity) cells.push_back(format_double(record.fidelity(s, r)));
      w.row(cells);
    }
  }
  w.close();
}

inline nlohmann::json run_record_summary_json(const RunRecord& record) {
  nlohmann::json j;
  j["t_rounds"] = record.config.t_rounds;
  j["m_rounds"] = record.config.m_rounds;
  j["n_repeats"] = record.config.n_repeats;
  j["samples"] = record.config.samples;
  j["sigma"] = record.config.sigma;
  j["seed"] = record.config.seed;
  j["noisy"] = record.config.noise.has_value();
  nlohmann::json reps = nlohmann::json::array();
  for (std::size_t r = 0; r < record.repeats.size(); ++r) {
    const RepeatSummary& s = record.repeats[r];
    nlohmann::json e;
    e["repeat"] = r + 1;
    e["mse_q"] = s.mse_q;
    e["mse_p"] = s.mse_p;
    e["stderr_q"] = s.stderr_q;
    e["stderr_p"] = s.stderr_p;
    if (std::isfinite(s.mean_fidelity)) e["mean_fidelity"] = s.mean_fidelity;
    reps.push_back(e);
  }
  j["repeats"] = reps;
  return j;
}

inline void write_json(const nlohmann::json& j,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string experiment;
  std::string config_hash;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string budget = "ci";
  double runtime_seconds = 0.0;
  std::vector<std::string> outputs;
  nlohmann::json checks;  // figure-parity tolerances and pass flags
};

inline nlohmann::json manifest_json(const RunManifest& m) {
  nlohmann::json j;
  j["experiment"] = m.experiment;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["workers"] = m.workers;
  j["budget"] = m.budget;
  j["runtime_seconds"] = m.runtime_seconds;
  j["outputs"] = m.outputs;
  j["versions"] = {{"gkpsense", "1.0.0"},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  if (!m.checks.is_null()) j["checks"] = m.checks;
  return j;
}

inline void emit_manifest(const RunManifest& m,
                          const std::filesystem::path& path) {
  write_json(manifest_json(m), path);
}

// ---------------------------------------------------------------------------
// Binary probability-table cache

// Little-endian raw doubles behind a magic/version tag; intended as a
// same-machine cache, not an interchange format.  Cached reads reproduce
// the written table bitwise.
namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& in, void* p, std::size_t n,
                       const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated table cache " + path);
}

inline void write_string(std::ofstream& out, const std::string& s) {
  const std::uint64_t n = s.size();
  write_bytes(out, &n, sizeof(n));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::ifstream& in, const std::string& path) {
  std::uint64_t n = 0;
  read_bytes(in, &n, sizeof(n), path);
  if (n > (1ULL << 20)) throw IoError("corrupt string in " + path);
  std::string s(n, '\0');
  read_bytes(in, s.data(), n, path);
  return s;
}

}  // namespace detail

inline constexpr char table_cache_magic[8] = {'G', 'K', 'P', 'T',
                                              'B', 'L', '1', '\n'};

inline void save_probability_table(const ProbabilityTable& table,
                                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  detail::write_bytes(out, table_cache_magic, sizeof(table_cache_magic));
  const std::int64_t n = table.grid.size();
  const std::int64_t cols = table.outcomes();
  const std::int64_t t = table.t_rounds;
  const std::int64_t quad = table.quadrature == Quadrature::p ? 1 : 0;
  detail::write_bytes(out, &t, sizeof(t));
  detail::write_bytes(out, &quad, sizeof(quad));
  detail::write_bytes(out, &n, sizeof(n));
  detail::write_bytes(out, &cols, sizeof(cols));
  detail::write_bytes(out, &table.meta.delta, sizeof(double));
  detail::write_string(out, table.meta.channel);
  detail::write_string(out, table.meta.state);
  detail::write_bytes(out, table.grid.values.data(),
                      sizeof(double) * static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t b = 0; b < cols; ++b) {
      const double v = table.probs(i, b);
      detail::write_bytes(out, &v, sizeof(v));
    }
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

inline ProbabilityTable load_probability_table(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  detail::read_bytes(in, magic, sizeof(magic), path.string());
  if (std::memcmp(magic, table_cache_magic, sizeof(magic)) != 0) {
    throw IoError("not a table cache: " + path.string());
  }
  std::int64_t t = 0, quad = 0, n = 0, cols = 0;
  detail::read_bytes(in, &t, sizeof(t), path.string());
  detail::read_bytes(in, &quad, sizeof(quad), path.string());
  detail::read_bytes(in, &n, sizeof(n), path.string());
  detail::read_bytes(in, &cols, sizeof(cols), path.string());
  if (t < 1 || t > 24 || n < 1 || n > (1 << 20) ||
      cols != (std::int64_t{1} << t)) {
    throw IoError("corrupt table cache header: " + path.string());
  }
  ProbabilityTable table;
  table.t_rounds = static_cast<int>(t);
  table.quadrature = quad == 1 ? Quadrature::p : Quadrature::q;
  detail::read_bytes(in, &table.meta.delta, sizeof(double), path.string());
  table.meta.channel = detail::read_string(in, path.string());
  table.meta.state = detail::read_string(in, path.string());
  table.grid.values.resize(n);
  detail::read_bytes(in, table.grid.values.data(),
                     sizeof(double) * static_cast<std::size_t>(n),
                     path.string());
  table.probs.resize(n, cols);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t b = 0; b < cols; ++b) {
      double v = 0.0;
      detail::read_bytes(in, &v, sizeof(v), path.string());
      table.probs(i, b) = v;
    }
  }
  return table;
}

}  // namespace gkpsense
