#include "opacgp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "opacgp/errors.hpp"

namespace opacgp {

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise_sd, std::uint64_t seed) {
  if (n == 0) throw InputError("gen_synthetic: n must be at least 1");
  if (!(noise_sd >= 0.0)) throw InputError("gen_synthetic: noise_sd must be nonnegative");
  Dataset ds;
  ds.x.resize(static_cast<Eigen::Index>(n), 1);
  ds.y.resize(static_cast<Eigen::Index>(n));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = n == 1 ? 0.0 : 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1);
    const double f = kind == SyntheticKind::sin ? std::sin(4.0 * x) : std::cos(4.0 * x);
    const auto r = static_cast<Eigen::Index>(i);
    ds.x(r, 0) = x;
    ds.y[r] = noise_sd > 0.0 ? f + noise_sd * noise(rng) : f;
  }
  ds.feature_names = {"x"};
  ds.target_name = kind == SyntheticKind::sin ? "sin4x" : "cos4x";
  ds.norm_stats.x_mean = Vector::Zero(1);
  ds.norm_stats.x_sd = Vector::Ones(1);
  return ds;
}

namespace {

std::string trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

std::size_t resolve_column(const ColumnRef& ref, const std::vector<std::string>& header, std::size_t width) {
  if (const auto* index = std::get_if<std::size_t>(&ref)) {
    if (*index >= width) throw SchemaError("csv: column index " + std::to_string(*index) + " out of range");
    return *index;
  }
  const std::string& name = std::get<std::string>(ref);
  if (header.empty()) throw SchemaError("csv: column '" + name + "' named but file has no header");
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw SchemaError("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw InputError("csv: cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::vector<std::string> header;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (schema.header && header.empty() && rows.empty()) {
      header = split_row(line);
      continue;
    }
    rows.push_back(split_row(line));
    line_numbers.push_back(line_no);
  }
  std::size_t width = header.size();
  for (const auto& r : rows) width = std::max(width, r.size());
  if (width == 0) throw SchemaError("csv: no columns in " + path.string());

  Dataset ds;
  const std::size_t target = resolve_column(schema.target, header, width);
  std::vector<std::size_t> features;
  if (schema.features.empty()) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c == target) continue;
      const bool numeric = std::any_of(rows.begin(), rows.end(), [c](const auto& r) {
        return c < r.size() && parse_number(r[c]).has_value();
      });
      if (numeric) {
        features.push_back(c);
      } else {
        ds.warnings.push_back("csv: skipping non-numeric column " + std::to_string(c));
      }
    }
  } else {
    for (const ColumnRef& ref : schema.features) features.push_back(resolve_column(ref, header, width));
  }
  if (features.empty()) throw SchemaError("csv: no feature columns selected");

  auto name_of = [&](std::size_t c) { return c < header.size() ? header[c] : "col" + std::to_string(c); };
  for (std::size_t c : features) ds.feature_names.push_back(name_of(c));
  ds.target_name = name_of(target);

  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    std::vector<double> parsed;
    bool ok = true;
    auto take = [&](std::size_t c) {
      const std::optional<double> v = c < cells.size() ? parse_number(cells[c]) : std::nullopt;
      if (!v || !std::isfinite(*v)) {
        ok = false;
        return 0.0;
      }
      return *v;
    };
    for (std::size_t c : features) parsed.push_back(take(c));
    const double yv = take(target);
    if (!ok) {
      ++ds.dropped_rows;
      ds.warnings.push_back("csv: dropped line " + std::to_string(line_numbers[r]) + " (unparseable or non-finite cell)");
      continue;
    }
    xs.insert(xs.end(), parsed.begin(), parsed.end());
    ys.push_back(yv);
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto d = static_cast<Eigen::Index>(features.size());
  ds.x.resize(n, d);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.y[i] = ys[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) ds.x(i, j) = xs[static_cast<std::size_t>(i * d + j)];
  }
  ds.norm_stats.x_mean = Vector::Zero(d);
  ds.norm_stats.x_sd = Vector::Ones(d);
  return ds;
}

Dataset normalize(const Dataset& ds) {
  const Eigen::Index n = ds.size();
  if (n < 2) throw InputError("normalize: need at least two rows");
  Dataset out = ds;
  NormStats& st = out.norm_stats;
  const double inv_n = 1.0 / static_cast<double>(n);
  st.x_mean = ds.x.colwise().sum().transpose() * inv_n;
  st.x_sd.resize(ds.dim());
  for (Eigen::Index j = 0; j < ds.dim(); ++j) {
    const double sd = std::sqrt((ds.x.col(j).array() - st.x_mean[j]).square().sum() * inv_n);
    if (sd > 0.0) {
      st.x_sd[j] = sd;
    } else {
      st.x_sd[j] = 1.0;
      out.warnings.push_back("normalize: feature " + std::to_string(j) + " has zero variance; centered only");
    }
    out.x.col(j) = (ds.x.col(j).array() - st.x_mean[j]) / st.x_sd[j];
  }
  st.y_mean = ds.y.sum() * inv_n;
  const double ysd = std::sqrt((ds.y.array() - st.y_mean).square().sum() * inv_n);
  if (ysd > 0.0) {
    st.y_sd = ysd;
  } else {
    st.y_sd = 1.0;
    out.warnings.push_back("normalize: target has zero variance; centered only");
  }
  out.y = (ds.y.array() - st.y_mean) / st.y_sd;
  out.normalized = true;
  return out;
}

PointSet denormalize_inputs(const NormStats& stats, const PointSet& x) {
  PointSet out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = x.col(j).array() * stats.x_sd[j] + stats.x_mean[j];
  return out;
}

Vector denormalize_targets(const NormStats& stats, const Vector& y) {
  return (y.array() * stats.y_sd + stats.y_mean).matrix();
}

std::string to_string(Ordering ordering) { return ordering == Ordering::iid ? "iid" : "sequential"; }

Ordering parse_ordering(const std::string& name) {
  if (name == "iid") return Ordering::iid;
  if (name == "sequential") return Ordering::sequential;
  throw InputError("unknown ordering: " + name);
}

namespace {

Batch gather(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  Batch b;
  const auto count = static_cast<Eigen::Index>(end - begin);
  b.x.resize(count, ds.dim());
  b.y.resize(count);
  for (std::size_t k = begin; k < end; ++k) {
    const auto row = static_cast<Eigen::Index>(order[k]);
    const auto dst = static_cast<Eigen::Index>(k - begin);
    b.x.row(dst) = ds.x.row(row);
    b.y[dst] = ds.y[row];
    b.rows.push_back(order[k]);
  }
  return b;
}

}  // namespace

Stream make_stream(const Dataset& ds, Ordering ordering, std::size_t batch_size, double pretrain_frac,
                   std::uint64_t seed) {
  if (!(pretrain_frac > 0.0 && pretrain_frac < 1.0)) throw InputError("make_stream: pretrain_frac must lie in (0, 1)");
  if (batch_size < 1) throw InputError("make_stream: batch_size must be at least 1");
  const auto n = static_cast<std::size_t>(ds.size());
  const auto n_pre = static_cast<std::size_t>(std::ceil(pretrain_frac * static_cast<double>(n) - 1e-9));
  if (n_pre == 0) throw InputError("make_stream: pretrain slice is empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (ordering == Ordering::iid) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  Stream s;
  s.ordering = ordering;
  s.batch_size = batch_size;
  s.seed = seed;
  s.pretrain = gather(ds, order, 0, n_pre);
  for (std::size_t begin = n_pre; begin < n; begin += batch_size) {
    s.batches.push_back(gather(ds, order, begin, std::min(n, begin + batch_size)));
  }
  return s;
}

}  // namespace opacgp
