#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "opacgp/data.hpp"
#include "opacgp/errors.hpp"
#include "opacgp/exact_gp.hpp"
#include "opacgp/trainer.hpp"
#include "support/helpers.hpp"

using namespace opacgp;
using namespace testing_support;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

bool same_record(const StepRecord& a, const StepRecord& b, bool with_step) {
  return (!with_step || a.step == b.step) && a.n_seen == b.n_seen && same_bits(a.train_mse, b.train_mse) &&
         same_bits(a.test_mse, b.test_mse) && same_bits(a.empirical_term, b.empirical_term) &&
         same_bits(a.kl_term, b.kl_term) && same_bits(a.constant_term, b.constant_term) &&
         same_bits(a.train_bound_total, b.train_bound_total) && same_bits(a.test_bound, b.test_bound) &&
         a.failed == b.failed;
}

Stream sin_stream(std::size_t n, Ordering order, std::size_t batch, std::uint64_t seed) {
  return make_stream(normalize(gen_synthetic(SyntheticKind::sin, n, 0.0, seed)), order, batch, 0.05, seed);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.num_inducing = 8;
  cfg.pretrain_steps = 50;
  return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lambda_for(40.0) == 1.0 / 40.0);
  cfg.lambda_mode = LambdaMode::fixed;
  cfg.lambda_value = 0.3;
  CHECK(cfg.lambda_for(40.0) == 0.3);
  TrainConfig bad;
  bad.inner_steps_online = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = TrainConfig{};
  bad.lr_variational = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = TrainConfig{};
  bad.delta = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = TrainConfig{};
  bad.min_noise_variance = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad.min_noise_variance = 2.0 * bad.init_noise_variance;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("initial inducing points") {
  PointSet x(3, 2);
  x << 0.0, 1.0, 2.0, -1.0, 1.0, 0.0;
  const PointSet z = initial_inducing_points(x, 5);
  CHECK(z(0, 0) == 0.0);
  CHECK(z(0, 1) == -1.0);
  CHECK(z(4, 0) == 2.0);
  CHECK(z(4, 1) == 1.0);
  CHECK(z(2, 0) == doctest::Approx(1.0).epsilon(1e-15));
  const PointSet one = initial_inducing_points(PointSet::Constant(1, 1, 0.7), 4);
  CHECK(one(0, 0) == doctest::Approx(0.7 - 1.5e-3).epsilon(1e-12));
  CHECK(one(3, 0) - one(2, 0) == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK_THROWS_AS(initial_inducing_points(PointSet(0, 1), 3), InputError);
}

TEST_CASE("sparse posterior with Z equal to X reproduces the exact posterior") {
  std::mt19937_64 rng(21);
  VariationalState s;
  s.params = random_params(rng, 2);
  s.inducing = random_points(rng, 12, 2);
  const Vector y = random_vector(rng, 12);
  set_sparse_posterior(s, s.inducing, y);
  const PointSet test = random_points(rng, 10, 2);
  const GaussianPosterior sparse = predictive(s, test, CovarianceMode::full);
  const GaussianPosterior exact = gp_posterior(s.params, s.inducing, y, test, CovarianceMode::full);
  CHECK((sparse.mean - exact.mean).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((sparse.cov - exact.cov).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("pretrain") {
  const Stream st = sin_stream(500, Ordering::sequential, 10, 0);
  SUBCASE("log marginal likelihood improves on the sin slice") {
    const PretrainResult r = pretrain(st.pretrain.x, st.pretrain.y, TrainConfig{});
    REQUIRE(r.lml_trace.size() == 201);
    CHECK(r.lml_trace.back() > r.lml_trace.front());
    CHECK(r.state.num_inducing() == 20);
    CHECK(r.warnings.empty());
  }
  SUBCASE("seed-fixed runs are bit-identical") {
    const PretrainResult a = pretrain(st.pretrain.x, st.pretrain.y, small_config());
    const PretrainResult b = pretrain(st.pretrain.x, st.pretrain.y, small_config());
    CHECK(a.state == b.state);
    CHECK(a.lml_trace == b.lml_trace);
  }
  SUBCASE("single-point slice") {
    TrainConfig cfg = small_config();
    cfg.num_inducing = 3;
    const PretrainResult r = pretrain(PointSet::Constant(1, 1, 0.25), Vector::Constant(1, 0.5), cfg);
    CHECK(r.state.inducing(1, 0) == 0.25);
    CHECK(r.state.inducing(2, 0) - r.state.inducing(0, 0) == doctest::Approx(2e-3).epsilon(1e-9));
    CHECK(r.warnings.size() == 1);
  }
  SUBCASE("noise variance stays at or above the floor") {
    TrainConfig cfg;
    cfg.min_noise_variance = 1e-2;
    const PretrainResult r = pretrain(st.pretrain.x, st.pretrain.y, cfg);
    CHECK(r.state.params.noise_variance() >= 1e-2 * (1.0 - 1e-12));
    CHECK(r.state.params.noise_variance() <= 1e-2 * (1.0 + 1e-12));
    VariationalState s = r.state;
    AdamState opt(ParameterLayout::of(s).size());
    cfg.objective = ObjectiveKind::baseline_nll;
    cfg.inner_steps_online = 20;
    online_step(s, opt, st.batches[0].x, st.batches[0].y, cfg, st.pretrain.x.rows() + st.batches[0].x.rows());
    CHECK(s.params.noise_variance() >= 1e-2 * (1.0 - 1e-12));
  }
  SUBCASE("empty or mismatched slice") {
    CHECK_THROWS_AS(pretrain(PointSet(0, 1), Vector(0), TrainConfig{}), InputError);
    CHECK_THROWS_AS(pretrain(PointSet::Zero(3, 1), Vector::Zero(2), TrainConfig{}), InputError);
  }
}

TEST_CASE("online_step") {
  std::mt19937_64 rng(31);
  SUBCASE("zero residual at the inducing inputs leaves only the constant term") {
    VariationalState s = random_state(rng, 4, 1);
    s.scale_tril = 1e-6 * Matrix::Identity(4, 4);
    const Vector y = predictive(s, s.inducing, CovarianceMode::diagonal).mean;
    TrainConfig cfg;
    AdamState opt(ParameterLayout::of(s).size());
    const OnlineStepResult r = online_step(s, opt, s.inducing, y, cfg, 30);
    const double constant = bound_constant(30, 1.0 / 30, cfg.delta, 1.0);
    CHECK(std::abs(r.objective_trace.front() - constant) < 1e-8);
    for (const PredictionMoments& p : r.prequential) CHECK(std::abs(p.y - p.mean) < 1e-12);
  }
  SUBCASE("fifty small inner steps do not increase the objective") {
    const Stream st = sin_stream(200, Ordering::iid, 5, 3);
    TrainConfig cfg = small_config();
    VariationalState s = pretrain(st.pretrain.x, st.pretrain.y, cfg).state;
    cfg.inner_steps_online = 50;
    cfg.lr_hyper = cfg.lr_variational = 1e-3;
    AdamState opt(ParameterLayout::of(s).size());
    for (ObjectiveKind kind : {ObjectiveKind::pacbayes, ObjectiveKind::baseline_nll}) {
      cfg.objective = kind;
      VariationalState work = s;
      AdamState work_opt = opt;
      const OnlineStepResult r = online_step(work, work_opt, st.batches[0].x, st.batches[0].y, cfg, 15);
      REQUIRE(r.objective_trace.size() == 51);
      CHECK(r.objective_trace.back() <= r.objective_trace.front());
      CHECK(work_opt.t == 50);
    }
  }
  SUBCASE("failure rolls back state and optimizer") {
    VariationalState s = random_state(rng, 4, 1);
    AdamState opt(ParameterLayout::of(s).size());
    const VariationalState before = s;
    const AdamState opt_before = opt;
    Vector y = Vector::Zero(2);
    y[1] = std::nan("");
    CHECK_THROWS_AS(online_step(s, opt, PointSet::Zero(2, 1), y, TrainConfig{}, 10), NumericalError);
    CHECK(s == before);
    CHECK(opt == opt_before);
    CHECK_THROWS_AS(online_step(s, opt, PointSet(0, 1), Vector(0), TrainConfig{}, 10), InputError);
  }
}

TEST_CASE("run_stream") {
  const Stream st = sin_stream(120, Ordering::iid, 4, 5);
  const TrainConfig cfg = small_config();

  SUBCASE("records satisfy the bound identities") {
    const RunResult r = run_stream(st, cfg);
    REQUIRE(r.records.size() == st.batches.size());
    std::size_t n = st.pretrain.rows.size();
    for (std::size_t i = 0; i < r.records.size(); ++i) {
      const StepRecord& rec = r.records[i];
      n += st.batches[i].rows.size();
      CHECK(rec.step == i + 1);
      CHECK(rec.n_seen == n);
      CHECK_FALSE(rec.failed);
      CHECK(rec.train_bound_total == rec.empirical_term + rec.kl_term + rec.constant_term);
      CHECK(rec.train_bound_total >= rec.empirical_term);
      CHECK(rec.kl_term >= 0.0);
    }
    CHECK(r.final_checkpoint.n_seen == 120);
  }
  SUBCASE("empty stream") {
    Stream empty = st;
    empty.batches.clear();
    const RunResult r = run_stream(empty, cfg);
    CHECK(r.records.empty());
  }
  SUBCASE("fixed-seed reruns are bit-identical") {
    const RunResult a = run_stream(st, cfg);
    const RunResult b = run_stream(st, cfg);
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(same_record(a.records[i], b.records[i], true));
    CHECK(a.final_checkpoint == b.final_checkpoint);
  }
  SUBCASE("checkpoint resume reproduces the uninterrupted run") {
    const RunResult full = run_stream(st, cfg);
    OnlineTrainer first(cfg);
    first.pretrain(st.pretrain.x, st.pretrain.y);
    const std::size_t cut = 11;
    for (std::size_t i = 0; i < cut; ++i) first.step(st.batches[i].x, st.batches[i].y);
    std::stringstream buf;
    write_checkpoint(buf, first.checkpoint());
    OnlineTrainer second(cfg);
    second.resume(read_checkpoint(buf));
    for (std::size_t i = cut; i < st.batches.size(); ++i) {
      CHECK(same_record(second.step(st.batches[i].x, st.batches[i].y), full.records[i], true));
    }
    CHECK(second.checkpoint() == full.final_checkpoint);
  }
  SUBCASE("a failed batch matches skipping it") {
    const std::size_t bad = 6;
    OnlineTrainer with_fail(cfg);
    OnlineTrainer skipping(cfg);
    with_fail.pretrain(st.pretrain.x, st.pretrain.y);
    skipping.pretrain(st.pretrain.x, st.pretrain.y);
    for (std::size_t i = 0; i < st.batches.size(); ++i) {
      if (i == bad) {
        Vector y = st.batches[i].y;
        y[0] = std::nan("");
        const StepRecord rec = with_fail.step(st.batches[i].x, y);
        CHECK(rec.failed);
        CHECK(std::isnan(rec.train_mse));
        CHECK_FALSE(rec.message.empty());
        continue;
      }
      const StepRecord a = with_fail.step(st.batches[i].x, st.batches[i].y);
      const StepRecord b = skipping.step(st.batches[i].x, st.batches[i].y);
      CHECK(same_record(a, b, false));
    }
    CHECK(with_fail.state() == skipping.state());
  }
  SUBCASE("stepping before pretraining") {
    OnlineTrainer t(cfg);
    CHECK_THROWS_AS(t.step(st.batches[0].x, st.batches[0].y), InputError);
  }
}

TEST_CASE("checkpoint parsing") {
  const Stream st = sin_stream(60, Ordering::iid, 5, 1);
  OnlineTrainer t(small_config());
  t.pretrain(st.pretrain.x, st.pretrain.y);
  t.step(st.batches[0].x, st.batches[0].y);
  std::stringstream buf;
  write_checkpoint(buf, t.checkpoint());
  const std::string bytes = buf.str();
  std::stringstream ok(bytes);
  CHECK(read_checkpoint(ok) == t.checkpoint());
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), ParseError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream bm(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(bm), ParseError);
}

TEST_CASE("finite_diff_grad") {
  auto f = [](const Vector& x) { return x[0] * x[0] + 3.0 * x[1]; };
  Vector x(2);
  x << 2.0, -1.0;
  const Vector g = finite_diff_grad(f, x);
  CHECK(g[0] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(g[1] == doctest::Approx(3.0).epsilon(1e-9));
  auto blow = [](const Vector& v) { return v[1] > 0.0 ? std::log(-1.0) : 0.0; };
  try {
    finite_diff_grad(blow, Vector::Zero(2));
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
  CHECK_THROWS_AS(finite_diff_grad(f, x, 0.0), InputError);
}

TEST_CASE("trainer gradients match finite differences along a sin run") {
  const Stream st = sin_stream(200, Ordering::iid, 5, 8);
  for (ObjectiveKind kind : {ObjectiveKind::pacbayes, ObjectiveKind::baseline_nll}) {
    TrainConfig cfg = small_config();
    cfg.objective = kind;
    OnlineTrainer t(cfg);
    t.pretrain(st.pretrain.x, st.pretrain.y);
    for (std::size_t i = 0; i < 20; ++i) {
      const VariationalState prior_state = t.state();
      t.step(st.batches[i].x, st.batches[i].y);
      if (i % 10 != 9) continue;
      const PriorSnapshot prior = snapshot(prior_state);
      const Batch& b = st.batches[i + 1];
      const auto m = static_cast<double>(t.checkpoint().n_seen + b.rows.size());
      const ObjectiveSettings settings{kind, cfg.loss, 1.0 / m, cfg.delta, m};
      const ParameterLayout layout = ParameterLayout::of(t.state());
      const Vector theta = pack(t.state());
      const Vector grad = evaluate_objective(unpack(layout, theta), prior, b.x, b.y, settings, true).grad;
      auto f = [&](const Vector& v) { return evaluate_objective(unpack(layout, v), prior, b.x, b.y, settings, false).value; };
      // Richardson-extrapolated: inducing inputs sit ~1e-4 from their old
      // positions, where the KL curves too sharply for plain differences at 1e-5
      const Vector fd = (4.0 * finite_diff_grad(f, theta, 1e-5) - finite_diff_grad(f, theta, 2e-5)) / 3.0;
      CAPTURE(static_cast<int>(kind));
      CAPTURE(i);
      CHECK(rel_norm_error(grad, fd) <= 1e-4);
    }
  }
}
