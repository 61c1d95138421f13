#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "opacgp/linalg.hpp"

namespace opacgp {

/// Per-column statistics used to normalize (and later de-normalize) a dataset.
struct NormStats {
  Vector x_mean;
  Vector x_sd;  // 1 for columns left unscaled
  double y_mean = 0.0;
  double y_sd = 1.0;
};

struct Dataset {
  PointSet x;
  Vector y;
  NormStats norm_stats;
  bool normalized = false;
  std::vector<std::string> feature_names;
  std::string target_name;
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index dim() const { return x.cols(); }
};

enum class SyntheticKind { sin, cos };

/// x equally spaced on [0, 2 pi]; y = sin(4x) or cos(4x) plus N(0, noise_sd^2).
Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise_sd, std::uint64_t seed);

/// Column reference by header name or zero-based index.
using ColumnRef = std::variant<std::string, std::size_t>;

struct CsvSchema {
  ColumnRef target = std::size_t{0};
  /// Empty: every other column that holds at least one number.
  std::vector<ColumnRef> features;
  bool header = true;
};

/// Comma-delimited numeric table. Rows with an unparseable or non-finite
/// selected cell are dropped and counted; a warning is recorded per drop.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Zero mean, unit (population) standard deviation per feature and for the
/// target. Zero-variance columns are centered only.
Dataset normalize(const Dataset& ds);
PointSet denormalize_inputs(const NormStats& stats, const PointSet& x);
Vector denormalize_targets(const NormStats& stats, const Vector& y);

enum class Ordering { iid, sequential };

std::string to_string(Ordering ordering);
Ordering parse_ordering(const std::string& name);

struct Batch {
  PointSet x;
  Vector y;
  std::vector<std::size_t> rows;  // source row indices
};

struct Stream {
  Batch pretrain;
  std::vector<Batch> batches;
  Ordering ordering = Ordering::sequential;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
};

/// First ceil(pretrain_frac * n) rows (after optional seeded permutation) form
/// the pretrain slice; the rest is chunked into batches of batch_size.
Stream make_stream(const Dataset& ds, Ordering ordering, std::size_t batch_size, double pretrain_frac,
                   std::uint64_t seed);

}  // namespace opacgp
