#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "opacgp/adam.hpp"
#include "opacgp/objective.hpp"
#include "opacgp/pacbayes.hpp"
#include "opacgp/streaming_gp.hpp"

namespace opacgp {

struct Stream;

enum class LambdaMode { one_over_m, fixed };

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::pacbayes;
  double lr_hyper = 0.1;
  double lr_variational = 0.01;
  int inner_steps_online = 1;
  int pretrain_steps = 200;
  double delta = 0.05;
  LambdaMode lambda_mode = LambdaMode::one_over_m;
  double lambda_value = 1.0;
  LossSpec loss = LossSpec::make(LossKind::exp, 0.1);
  int num_inducing = 20;
  std::uint64_t seed = 0;
  // Starting hyperparameters for pretraining (normalized units).
  double init_lengthscale = 1.0;
  double init_signal_variance = 1.0;
  double init_noise_variance = 0.1;
  // Every update projects the noise variance onto [min_noise_variance, inf).
  double min_noise_variance = 1e-4;

  void validate() const;
  double lambda_for(double m_count) const;
};

/// One row of the per-step trace.
struct StepRecord {
  std::size_t step = 0;
  std::size_t n_seen = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double empirical_term = 0.0;
  double kl_term = 0.0;
  double constant_term = 0.0;
  double train_bound_total = 0.0;
  double test_bound = 0.0;
  double wall_time = 0.0;
  bool failed = false;
  std::string message;
};

struct PretrainResult {
  VariationalState state;
  /// Log marginal likelihood of the slice before each Adam step, plus the final value.
  std::vector<double> lml_trace;
  std::vector<std::string> warnings;
};

/// Linearly spaced inducing inputs over the bounding box of `x` (diagonal of
/// the box). A single-point range is spread at spacing 1e-3 around that point.
PointSet initial_inducing_points(const PointSet& x, int num_inducing);

/// Fits hyperparameters on the slice by exact log marginal likelihood, then
/// sets q(u) to the optimal sparse posterior on the slice.
PretrainResult pretrain(const PointSet& x, const Vector& y, const TrainConfig& cfg);

/// Optimal Gaussian q(u) for fixed Z and hyperparameters given (x, y).
void set_sparse_posterior(VariationalState& state, const PointSet& x, const Vector& y);

struct OnlineStepResult {
  /// Bound decomposition of the updated state against the pre-step prior.
  BoundReport report;
  /// Predictions of the pre-step state on the batch (held out at prediction time).
  std::vector<PredictionMoments> prequential;
  /// Predictions of the updated state on the batch.
  std::vector<PredictionMoments> fitted;
  /// Objective value before and after each inner step (size inner_steps + 1).
  std::vector<double> objective_trace;
};

/// Per-coordinate learning rates matching pack(state).
Vector learning_rates(const ParameterLayout& layout, const TrainConfig& cfg);

/// One online update of `state` on a batch. On any failure both `state` and
/// `opt` are left exactly as they were and the error propagates.
OnlineStepResult online_step(VariationalState& state, AdamState& opt, const PointSet& batch_x,
                             const Vector& batch_y, const TrainConfig& cfg, std::size_t n_seen,
                             std::size_t step_index = 0);

/// Everything needed to continue a stream bit-exactly.
struct TrainerCheckpoint {
  VariationalState state;
  AdamState opt;
  std::size_t steps_done = 0;
  std::size_t n_seen = 0;
  std::size_t online_points = 0;
  double sum_train_sq = 0.0;
  double sum_test_sq = 0.0;
  double cumulative_empirical = 0.0;

  bool operator==(const TrainerCheckpoint&) const = default;
};

void write_checkpoint(std::ostream& out, const TrainerCheckpoint& ck);
TrainerCheckpoint read_checkpoint(std::istream& in);

/// Single-writer online learner: pretrain once, then one step per batch.
class OnlineTrainer {
 public:
  explicit OnlineTrainer(TrainConfig cfg);

  PretrainResult pretrain(const PointSet& x, const Vector& y);
  void resume(TrainerCheckpoint ck);

  /// Processes one batch. A numerical failure is caught, recorded and the
  /// trainer continues from its pre-batch state.
  StepRecord step(const PointSet& batch_x, const Vector& batch_y);

  const VariationalState& state() const { return ck_.state; }
  const TrainerCheckpoint& checkpoint() const { return ck_; }
  const TrainConfig& config() const { return cfg_; }
  bool ready() const { return ready_; }

 private:
  TrainConfig cfg_;
  TrainerCheckpoint ck_;
  bool ready_ = false;
};

struct RunResult {
  PretrainResult pretrain;
  std::vector<StepRecord> records;
  TrainerCheckpoint final_checkpoint;
};

/// Pretrains on the stream's slice, then processes every batch in order.
/// `on_record` (optional) observes each record as it is produced.
RunResult run_stream(const Stream& stream, const TrainConfig& cfg,
                     const std::function<void(const StepRecord&)>& on_record = {});

/// Central-difference gradient. Throws NumericalError naming the coordinate
/// whose perturbed objective is non-finite.
Vector finite_diff_grad(const std::function<double(const Vector&)>& objective, const Vector& x,
                        double step = 1e-5);

}  // namespace opacgp
