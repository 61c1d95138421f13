#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "opacgp/cli.hpp"
#include "opacgp/errors.hpp"

namespace opacgp::cli {

using Json = nlohmann::ordered_json;

namespace {

std::string objective_name(ObjectiveKind k) { return k == ObjectiveKind::pacbayes ? "pacbayes" : "baseline-nll"; }

ObjectiveKind parse_objective(const std::string& s) {
  if (s == "pacbayes") return ObjectiveKind::pacbayes;
  if (s == "baseline-nll" || s == "baseline_nll") return ObjectiveKind::baseline_nll;
  throw UsageError("unknown objective '" + s + "' (expected pacbayes or baseline-nll)");
}

bool is_index(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

ColumnRef column_ref(const std::string& s) {
  if (is_index(s)) return static_cast<std::size_t>(std::stoull(s));
  return s;
}

std::size_t count_columns(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

// Flag values shared by run and compare, converted into a RunSpec afterwards.
struct ExperimentFlags {
  std::string data = "sin";
  std::size_t n = 500;
  double noise = 0.1;
  std::string target;
  std::vector<std::string> features;
  bool no_header = false;
  std::string sha256;
  std::vector<std::string> orders{"iid"};
  std::vector<std::string> objectives{"pacbayes"};
  int inducing = 20;
  std::size_t batch_size = 0;
  double delta = 0.05;
  double epsilon2 = 0.01;
  std::string lambda = "1/m";
  std::string loss = "exp";
  double lr_hyper = 0.1;
  double lr_var = 0.01;
  int pretrain_steps = 200;
  int inner_steps = 1;
  double min_noise = 1e-4;
  std::uint64_t seed = 0;
};

void add_experiment_flags(CLI::App* app, ExperimentFlags& f, bool multi) {
  app->add_option("--data", f.data, "sin | cos | csv:<path>")->capture_default_str();
  app->add_option("--n", f.n, "synthetic sample count")->capture_default_str();
  app->add_option("--noise", f.noise, "synthetic noise standard deviation")->capture_default_str();
  app->add_option("--target", f.target, "csv target column (name or index; default last)");
  app->add_option("--features", f.features, "csv feature columns (names or indices; default all others)")
      ->delimiter(',');
  app->add_flag("--no-header", f.no_header, "csv file has no header row");
  app->add_option("--sha256", f.sha256, "expected checksum of the csv file");
  auto* order = app->add_option("--order", f.orders, "iid | sequential")->capture_default_str();
  auto* objective = app->add_option("--objective", f.objectives, "pacbayes | baseline-nll")->capture_default_str();
  if (!multi) {
    order->expected(1);
    objective->expected(1);
  } else {
    order->delimiter(',');
    objective->delimiter(',');
  }
  app->add_option("--inducing", f.inducing, "number of inducing points M")->capture_default_str();
  app->add_option("--batch-size", f.batch_size, "points per online batch (default 10 synthetic, 1 csv)");
  app->add_option("--delta", f.delta, "confidence parameter")->capture_default_str();
  app->add_option("--epsilon2", f.epsilon2, "squared loss width")->capture_default_str();
  app->add_option("--lambda", f.lambda, "1/m or a positive value")->capture_default_str();
  app->add_option("--loss", f.loss, "exp | indicator | clip2 | interval")->capture_default_str();
  app->add_option("--lr-hyper", f.lr_hyper, "Adam rate for kernel hyperparameters")->capture_default_str();
  app->add_option("--lr-var", f.lr_var, "Adam rate for inducing inputs and q(u)")->capture_default_str();
  app->add_option("--pretrain-steps", f.pretrain_steps, "Adam steps on the pretrain slice")->capture_default_str();
  app->add_option("--inner-steps", f.inner_steps, "Adam steps per online batch")->capture_default_str();
  app->add_option("--min-noise", f.min_noise, "floor on the noise variance")->capture_default_str();
  app->add_option("--seed", f.seed, "data, ordering and run seed")->capture_default_str();
}

RunSpec to_spec(const ExperimentFlags& f, const std::string& order, const std::string& objective) {
  RunSpec s;
  if (f.data == "sin" || f.data == "cos") {
    s.data.kind = f.data;
  } else if (f.data.rfind("csv:", 0) == 0 && f.data.size() > 4) {
    s.data.kind = "csv";
    s.data.path = f.data.substr(4);
  } else {
    throw UsageError("--data must be sin, cos or csv:<path>");
  }
  s.data.n = f.n;
  s.data.noise_sd = f.noise;
  s.data.target = f.target;
  s.data.features = f.features;
  s.data.header = !f.no_header;
  s.data.sha256 = f.sha256;
  s.batch_size = f.batch_size;
  s.seed = f.seed;
  try {
    s.ordering = parse_ordering(order);
    TrainConfig& c = s.config;
    c.objective = parse_objective(objective);
    c.num_inducing = f.inducing;
    c.delta = f.delta;
    if (!(f.epsilon2 > 0.0)) throw UsageError("--epsilon2 must be positive");
    c.loss = LossSpec::make(parse_loss_kind(f.loss), std::sqrt(f.epsilon2));
    if (f.lambda == "1/m") {
      c.lambda_mode = LambdaMode::one_over_m;
    } else {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f.lambda, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f.lambda.size()) throw UsageError("--lambda must be 1/m or a number");
      c.lambda_mode = LambdaMode::fixed;
      c.lambda_value = v;
    }
    c.lr_hyper = f.lr_hyper;
    c.lr_variational = f.lr_var;
    c.pretrain_steps = f.pretrain_steps;
    c.inner_steps_online = f.inner_steps;
    c.min_noise_variance = f.min_noise;
    c.seed = f.seed;
    c.validate();
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  if (s.data.n == 0) throw UsageError("--n must be positive");
  if (s.data.noise_sd < 0.0) throw UsageError("--noise must be nonnegative");
  return s;
}

double epsilon2_of(const LossSpec& l) { return l.epsilon * l.epsilon; }

Json record_json(const StepRecord& r) {
  Json j;
  j["step"] = r.step;
  j["n_seen"] = r.n_seen;
  j["train_mse"] = r.train_mse;
  j["test_mse"] = r.test_mse;
  j["empirical_term"] = r.empirical_term;
  j["kl_term"] = r.kl_term;
  j["constant_term"] = r.constant_term;
  j["train_bound"] = r.train_bound_total;
  j["test_bound"] = r.test_bound;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunFlags {
  std::string out_dir = "run";
  std::string manifest;
  std::string checkpoint;
  std::string resume;
  std::size_t stop_after = 0;
  bool record_time = false;
};

int cmd_run(const ExperimentFlags& flags, const RunFlags& rf, std::ostream& out, std::ostream& err) {
  const RunSpec spec =
      rf.manifest.empty() ? to_spec(flags, flags.orders.front(), flags.objectives.front()) : parse_manifest(read_text(rf.manifest));
  const Stream stream = build_stream(spec);
  const std::filesystem::path dir(rf.out_dir);
  std::filesystem::create_directories(dir);

  std::vector<std::pair<std::string, std::string>> artifacts{
      {"manifest", (dir / "manifest.json").string()},
      {"trace", (dir / "trace.csv").string()},
      {"summary", (dir / "summary.json").string()}};
  if (!rf.checkpoint.empty()) artifacts.emplace_back("checkpoint", rf.checkpoint);
  write_text(dir / "manifest.json", manifest_json(spec, artifacts));

  OnlineTrainer trainer(spec.config);
  Json summary;
  if (!rf.resume.empty()) {
    std::ifstream in(rf.resume, std::ios::binary);
    if (!in) throw InputError("cannot open " + rf.resume);
    trainer.resume(read_checkpoint(in));
    summary["resumed_from"] = rf.resume;
  } else {
    const PretrainResult pre = trainer.pretrain(stream.pretrain.x, stream.pretrain.y);
    summary["pretrain"] = {{"rows", stream.pretrain.rows.size()},
                           {"lml_initial", pre.lml_trace.front()},
                           {"lml_final", pre.lml_trace.back()},
                           {"warnings", pre.warnings}};
    for (const std::string& w : pre.warnings) err << "warning: " << w << '\n';
  }

  std::ofstream trace(dir / "trace.csv", std::ios::binary);
  if (!trace) throw InputError("cannot write trace in " + dir.string());
  trace << trace_header() << '\n';
  const std::size_t first = trainer.checkpoint().steps_done;
  std::size_t last = stream.batches.size();
  if (rf.stop_after > 0) last = std::min(last, rf.stop_after);
  std::optional<StepRecord> final_record;
  Json failures = Json::array();
  for (std::size_t i = first; i < last; ++i) {
    const Batch& b = stream.batches[i];
    const StepRecord rec = trainer.step(b.x, b.y);
    trace << trace_row(rec, rf.record_time) << '\n';
    if (rec.failed) {
      err << "warning: step " << rec.step << " failed: " << rec.message << '\n';
      failures.push_back({{"step", rec.step}, {"message", rec.message}});
    } else {
      final_record = rec;
    }
  }
  trace.close();

  if (!rf.checkpoint.empty()) {
    std::ofstream ck(rf.checkpoint, std::ios::binary);
    if (!ck) throw InputError("cannot write " + rf.checkpoint);
    write_checkpoint(ck, trainer.checkpoint());
  }

  summary["batches_total"] = stream.batches.size();
  summary["steps_done"] = trainer.checkpoint().steps_done;
  summary["failed_steps"] = failures;
  summary["final"] = final_record ? record_json(*final_record) : Json();
  summary["state_bytes"] = serialize_state(trainer.state()).size();
  summary["hyperparameters"] = {
      {"lengthscales", std::vector<double>(trainer.state().params.log_lengthscales.array().exp().begin(),
                                           trainer.state().params.log_lengthscales.array().exp().end())},
      {"signal_variance", trainer.state().params.signal_variance()},
      {"noise_variance", trainer.state().params.noise_variance()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "wrote " << (dir / "trace.csv").string() << " (" << (last > first ? last - first : 0) << " steps)\n";
  return exit_ok;
}

struct CompareFlags {
  std::size_t seeds = 5;
  std::vector<std::size_t> checkpoints{10, 20, 30};
  std::string out;
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

int cmd_compare(const ExperimentFlags& flags, const CompareFlags& cf, std::ostream& out, std::ostream& err) {
  if (cf.seeds == 0) throw UsageError("--seeds must be positive");
  if (cf.checkpoints.empty()) throw UsageError("--checkpoints needs at least one value");
  for (std::size_t t : cf.checkpoints) {
    if (t == 0) throw UsageError("--checkpoints are 1-based batch indices");
  }
  struct Job {
    RunSpec spec;
    std::size_t config;
    std::vector<StepRecord> records;
    std::string error;
  };
  std::vector<CompareRow> rows;
  std::vector<Job> jobs;
  for (const std::string& objective : flags.objectives) {
    for (const std::string& order : flags.orders) {
      const RunSpec base = to_spec(flags, order, objective);
      rows.push_back({objective_name(base.config.objective), to_string(base.ordering), {}});
      for (std::size_t k = 0; k < cf.seeds; ++k) {
        RunSpec s = base;
        s.seed = flags.seed + k;
        s.config.seed = s.seed;
        jobs.push_back({s, rows.size() - 1, {}, {}});
      }
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i].records = run_stream(build_stream(jobs[i].spec), jobs[i].spec.config).records;
      } catch (const std::exception& e) {
        jobs[i].error = e.what();
      }
    }
  };
  const unsigned n_threads = std::min<unsigned>(thread_cap(), static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  for (const Job& j : jobs) {
    if (!j.error.empty()) throw std::runtime_error("compare: seed " + std::to_string(j.spec.seed) + ": " + j.error);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t t : cf.checkpoints) {
      std::vector<double> train, test;
      bool clamped = false;
      for (const Job& j : jobs) {
        if (j.config != r) continue;
        const auto [rec, was_clamped] = record_at(j.records, t);
        clamped = clamped || was_clamped;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        train.push_back(rec ? rec->train_mse : nan);
        test.push_back(rec ? rec->test_mse : nan);
      }
      rows[r].cells.push_back({mean_of(train), sd_of(train), mean_of(test), sd_of(test), clamped});
      if (clamped) err << "warning: checkpoint " << t << " is past the end of a " << rows[r].objective << "/"
                       << rows[r].ordering << " stream; final value used\n";
    }
  }

  if (cf.out.empty()) {
    write_compare(out, cf.checkpoints, rows);
  } else {
    std::ofstream file(cf.out, std::ios::binary);
    if (!file) throw InputError("cannot write " + cf.out);
    write_compare(file, cf.checkpoints, rows);
  }
  return exit_ok;
}

int cmd_report(const std::vector<std::string>& traces, const std::string& out_path, std::ostream& out) {
  if (traces.empty()) throw UsageError("report needs at least one trace file");
  std::vector<std::vector<ReportRow>> reports;
  for (const std::string& path : traces) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    reports.push_back(report_rows(read_trace(in, path)));
  }
  if (out_path.empty()) {
    write_report(out, reports);
  } else {
    std::ofstream file(out_path, std::ios::binary);
    if (!file) throw InputError("cannot write " + out_path);
    write_report(file, reports);
  }
  return exit_ok;
}

}  // namespace

std::size_t effective_batch_size(const RunSpec& spec) {
  if (spec.batch_size > 0) return spec.batch_size;
  return spec.data.kind == "csv" ? 1 : 10;
}

Dataset load_source(const DataSource& src, std::uint64_t seed) {
  if (src.kind == "sin" || src.kind == "cos") {
    const SyntheticKind kind = src.kind == "sin" ? SyntheticKind::sin : SyntheticKind::cos;
    return normalize(gen_synthetic(kind, src.n, src.noise_sd, seed));
  }
  if (src.kind != "csv") throw InputError("unknown data source '" + src.kind + "'");
  if (!src.sha256.empty()) {
    const std::string digest = sha256_file(src.path);
    if (digest != src.sha256) throw InputError("checksum mismatch for " + src.path.string() + ": " + digest);
  }
  CsvSchema schema;
  schema.header = src.header;
  if (src.target.empty()) {
    schema.target = count_columns(src.path) - 1;
  } else {
    schema.target = column_ref(src.target);
  }
  for (const std::string& f : src.features) schema.features.push_back(column_ref(f));
  return normalize(load_csv(src.path, schema));
}

Stream build_stream(const RunSpec& spec) {
  return make_stream(load_source(spec.data, spec.seed), spec.ordering, effective_batch_size(spec), 0.05, spec.seed);
}

std::string manifest_json(const RunSpec& spec, const std::vector<std::pair<std::string, std::string>>& artifacts) {
  Json j;
  j["tool"] = "opacgp";
  j["version"] = kToolVersion;
  Json data;
  data["kind"] = spec.data.kind;
  if (spec.data.kind == "csv") {
    data["path"] = spec.data.path.string();
    data["target"] = spec.data.target;
    data["features"] = spec.data.features;
    data["header"] = spec.data.header;
    data["sha256"] = spec.data.sha256.empty() ? sha256_file(spec.data.path) : spec.data.sha256;
  } else {
    data["n"] = spec.data.n;
    data["noise_sd"] = spec.data.noise_sd;
  }
  j["data"] = data;
  j["ordering"] = to_string(spec.ordering);
  j["batch_size"] = effective_batch_size(spec);
  j["seed"] = spec.seed;
  const TrainConfig& c = spec.config;
  Json cfg;
  cfg["objective"] = objective_name(c.objective);
  cfg["lr_hyper"] = c.lr_hyper;
  cfg["lr_variational"] = c.lr_variational;
  cfg["inner_steps_online"] = c.inner_steps_online;
  cfg["pretrain_steps"] = c.pretrain_steps;
  cfg["delta"] = c.delta;
  if (c.lambda_mode == LambdaMode::one_over_m) {
    cfg["lambda"] = "1/m";
  } else {
    cfg["lambda"] = c.lambda_value;
  }
  cfg["loss"] = to_string(c.loss.kind);
  cfg["epsilon"] = c.loss.epsilon;
  cfg["epsilon2"] = epsilon2_of(c.loss);
  cfg["num_inducing"] = c.num_inducing;
  cfg["init_lengthscale"] = c.init_lengthscale;
  cfg["init_signal_variance"] = c.init_signal_variance;
  cfg["init_noise_variance"] = c.init_noise_variance;
  cfg["min_noise_variance"] = c.min_noise_variance;
  j["config"] = cfg;
  Json arts;
  for (const auto& [k, v] : artifacts) arts[k] = v;
  j["artifacts"] = arts;
  return j.dump(2) + "\n";
}

RunSpec parse_manifest(const std::string& text) {
  RunSpec s;
  try {
    const Json j = Json::parse(text);
    const Json& d = j.at("data");
    s.data.kind = d.at("kind").get<std::string>();
    if (s.data.kind == "csv") {
      s.data.path = d.at("path").get<std::string>();
      s.data.target = d.at("target").get<std::string>();
      s.data.features = d.at("features").get<std::vector<std::string>>();
      s.data.header = d.at("header").get<bool>();
      s.data.sha256 = d.at("sha256").get<std::string>();
    } else {
      s.data.n = d.at("n").get<std::size_t>();
      s.data.noise_sd = d.at("noise_sd").get<double>();
    }
    s.ordering = parse_ordering(j.at("ordering").get<std::string>());
    s.batch_size = j.at("batch_size").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    const Json& c = j.at("config");
    TrainConfig& t = s.config;
    t.objective = parse_objective(c.at("objective").get<std::string>());
    t.lr_hyper = c.at("lr_hyper").get<double>();
    t.lr_variational = c.at("lr_variational").get<double>();
    t.inner_steps_online = c.at("inner_steps_online").get<int>();
    t.pretrain_steps = c.at("pretrain_steps").get<int>();
    t.delta = c.at("delta").get<double>();
    if (c.at("lambda").is_string()) {
      if (c.at("lambda").get<std::string>() != "1/m") throw ParseError("manifest: bad lambda");
      t.lambda_mode = LambdaMode::one_over_m;
    } else {
      t.lambda_mode = LambdaMode::fixed;
      t.lambda_value = c.at("lambda").get<double>();
    }
    t.loss = LossSpec::make(parse_loss_kind(c.at("loss").get<std::string>()), c.at("epsilon").get<double>());
    t.num_inducing = c.at("num_inducing").get<int>();
    t.init_lengthscale = c.at("init_lengthscale").get<double>();
    t.init_signal_variance = c.at("init_signal_variance").get<double>();
    t.init_noise_variance = c.at("init_noise_variance").get<double>();
    t.min_noise_variance = c.at("min_noise_variance").get<double>();
    t.seed = s.seed;
    t.validate();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  } catch (const InputError& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  } catch (const UsageError& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  return s;
}

std::pair<const StepRecord*, bool> record_at(const std::vector<StepRecord>& records, std::size_t t) {
  const bool clamped = t > records.size();
  std::size_t i = std::min(t, records.size());
  while (i > 0 && records[i - 1].failed) --i;
  return {i > 0 ? &records[i - 1] : nullptr, clamped};
}

void write_compare(std::ostream& out, const std::vector<std::size_t>& checkpoints, const std::vector<CompareRow>& rows) {
  out << "objective,ordering";
  for (std::size_t t : checkpoints) {
    out << fmt::format(",train_mse_t{0}_mean,train_mse_t{0}_sd,test_mse_t{0}_mean,test_mse_t{0}_sd,clamped_t{0}", t);
  }
  out << '\n';
  for (const CompareRow& r : rows) {
    out << r.objective << ',' << r.ordering;
    for (const CompareCell& c : r.cells) {
      out << fmt::format(",{},{},{},{},{}", c.train_mean, c.train_sd, c.test_mean, c.test_sd, c.clamped ? 1 : 0);
    }
    out << '\n';
  }
}

unsigned thread_cap() {
  if (const char* env = std::getenv("OPACGP_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming sparse Gaussian process regression with an online PAC-Bayes objective", "opacgp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  ExperimentFlags run_flags;
  RunFlags rf;
  CLI::App* run = app.add_subcommand("run", "train on one stream and write manifest, trace and summary");
  add_experiment_flags(run, run_flags, false);
  run->add_option("--out", rf.out_dir, "output directory")->capture_default_str();
  run->add_option("--manifest", rf.manifest, "rerun the configuration recorded in a manifest");
  run->add_option("--checkpoint", rf.checkpoint, "write the trainer checkpoint here when done");
  run->add_option("--resume", rf.resume, "continue from a trainer checkpoint");
  run->add_option("--stop-after", rf.stop_after, "stop once this many batches have been processed");
  run->add_flag("--record-time", rf.record_time, "write measured wall time instead of 0");

  ExperimentFlags cmp_flags;
  CompareFlags cf;
  CLI::App* compare = app.add_subcommand("compare", "run objectives x orderings over shared seeds");
  add_experiment_flags(compare, cmp_flags, true);
  compare->add_option("--seeds", cf.seeds, "number of seeds, starting at --seed")->capture_default_str();
  compare->add_option("--checkpoints", cf.checkpoints, "batch indices to tabulate")->delimiter(',')->capture_default_str();
  compare->add_option("--out", cf.out, "output CSV (default stdout)");

  std::vector<std::string> traces;
  std::string report_out;
  CLI::App* report = app.add_subcommand("report", "bound-versus-loss table from trace files");
  report->add_option("traces", traces, "trace CSV files");
  report->add_option("--out", report_out, "output CSV (default stdout)");

  std::string url = kStockUrl;
  std::string fetch_out = "data/fx2007-processed.csv";
  std::string fetch_sha;
  CLI::App* fetch = app.add_subcommand("fetch", "download the stock CSV and record its checksum");
  fetch->add_option("--url", url)->capture_default_str();
  fetch->add_option("--out", fetch_out)->capture_default_str();
  fetch->add_option("--sha256", fetch_sha, "expected checksum");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return exit_usage;
  }

  try {
    if (*run) {
      if (run_flags.orders.size() != 1 || run_flags.objectives.size() != 1) {
        throw UsageError("run takes exactly one --order and one --objective");
      }
      return cmd_run(run_flags, rf, out, err);
    }
    if (*compare) return cmd_compare(cmp_flags, cf, out, err);
    if (*report) return cmd_report(traces, report_out, out);
    if (*fetch) {
      const std::string digest = fetch_to_file(url, fetch_out, fetch_sha);
      out << digest << "  " << fetch_out << '\n';
      return exit_ok;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_runtime;
  }
  return exit_usage;
}

}  // namespace opacgp::cli
