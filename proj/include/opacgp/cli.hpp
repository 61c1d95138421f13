#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "opacgp/data.hpp"
#include "opacgp/trainer.hpp"

namespace opacgp::cli {

inline constexpr const char* kToolVersion = "1.0.0";

/// Exit codes of every subcommand.
enum ExitCode { exit_ok = 0, exit_runtime = 1, exit_usage = 2 };

/// Thrown for invalid flag values; maps to exit_usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- trace CSV ----

/// step,n_seen,train_mse,test_mse,empirical_term,kl_term,constant_term,train_bound,test_bound,wall_time
std::string trace_header();
/// Numbers use shortest round-trip formatting; wall_time is written as 0
/// unless `with_time`.
std::string trace_row(const StepRecord& rec, bool with_time);
void write_trace(std::ostream& out, const std::vector<StepRecord>& records, bool with_time);
/// Throws ParseError naming the offending line of `source`.
std::vector<StepRecord> read_trace(std::istream& in, const std::string& source);

struct ReportRow {
  std::size_t n_seen = 0;
  double cumulative_empirical = 0.0;
  double test_bound = 0.0;
};

/// Cumulative held-out empirical loss is recovered as test_bound minus the
/// constant term (both use m = n_seen and the same lambda). Failed rows are
/// skipped. Throws NumericalError if a bound falls below its empirical loss.
std::vector<ReportRow> report_rows(const std::vector<StepRecord>& trace);
/// trace,n_seen,cumulative_empirical,test_bound
void write_report(std::ostream& out, const std::vector<std::vector<ReportRow>>& reports);

// ---- experiment configuration ----

struct DataSource {
  std::string kind = "sin";  // sin | cos | csv
  std::filesystem::path path;
  std::size_t n = 500;
  double noise_sd = 0.1;
  std::string target;               // csv: column name or index; empty = last column
  std::vector<std::string> features;  // csv: names or indices; empty = all others
  bool header = true;
  std::string sha256;  // csv: recorded checksum, verified when nonempty
};

struct RunSpec {
  DataSource data;
  Ordering ordering = Ordering::iid;
  std::size_t batch_size = 0;  // 0 = default for the source
  TrainConfig config;
  std::uint64_t seed = 0;
};

std::size_t effective_batch_size(const RunSpec& spec);
/// Loads (and normalizes) the dataset named by `src`.
Dataset load_source(const DataSource& src, std::uint64_t seed);
Stream build_stream(const RunSpec& spec);

std::string manifest_json(const RunSpec& spec, const std::vector<std::pair<std::string, std::string>>& artifacts);
RunSpec parse_manifest(const std::string& json_text);

struct CompareCell {
  double train_mean = 0.0;
  double train_sd = 0.0;
  double test_mean = 0.0;
  double test_sd = 0.0;
  bool clamped = false;
};

struct CompareRow {
  std::string objective;
  std::string ordering;
  std::vector<CompareCell> cells;  // one per checkpoint
};

/// Value of the running train/test MSE at batch index t (1-based). A t past
/// the end takes the final value and is flagged; failed rows fall back to the
/// latest successful one.
std::pair<const StepRecord*, bool> record_at(const std::vector<StepRecord>& records, std::size_t t);
void write_compare(std::ostream& out, const std::vector<std::size_t>& checkpoints, const std::vector<CompareRow>& rows);

/// Worker count for compare: OPACGP_THREADS if set and positive, else the
/// hardware concurrency.
unsigned thread_cap();

// ---- fetch ----

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Downloads `url` to `out` and writes `out`.sha256 next to it. Throws
/// InputError on network or HTTP failure, and on checksum mismatch when
/// `expected_sha256` is nonempty.
std::string fetch_to_file(const std::string& url, const std::filesystem::path& out, const std::string& expected_sha256);

inline constexpr const char* kStockUrl =
    "https://raw.githubusercontent.com/trungngv/cogp/master/data/fx/fx2007-processed.csv";

/// Entry point of the opacgp tool.
int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace opacgp::cli
