#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "opacgp/errors.hpp"
#include "opacgp/streaming_gp.hpp"
#include "support/helpers.hpp"

using namespace opacgp;
using namespace testing_support;

namespace {

VariationalState prior_matched(const KernelParams& p, const PointSet& z) {
  VariationalState s;
  s.params = p;
  s.inducing = z;
  s.mean = Vector::Zero(z.rows());
  s.scale_tril = Eigen::LLT<Matrix>(kernel_matrix(p, z, z)).matrixL();
  return s;
}

// KL(N(mq, Sq) || N(mp, Sp)) from explicit inverses and determinants.
double dense_kl(const Vector& mq, const Matrix& sq, const Vector& mp, const Matrix& sp) {
  const Matrix pinv = sp.inverse();
  const Vector d = mp - mq;
  return 0.5 * ((pinv * sq).trace() + d.dot(pinv * d) - static_cast<double>(mq.size()) +
                std::log(sp.determinant() / sq.determinant()));
}

}  // namespace

TEST_CASE("predictive at the inducing inputs returns q(u)") {
  std::mt19937_64 rng(1);
  const KernelParams p = random_params(rng, 2);
  const PointSet z = random_points(rng, 4, 2);
  VariationalState s = prior_matched(p, z);
  s.mean = random_vector(rng, 4);
  const GaussianPosterior post = predictive(s, z);
  CHECK((post.mean - s.mean).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((post.cov - s.covariance()).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("uninformative state reproduces the GP prior") {
  std::mt19937_64 rng(2);
  const KernelParams p = random_params(rng, 1);
  const VariationalState s = prior_matched(p, random_points(rng, 5, 1));
  const PointSet xs = random_points(rng, 7, 1);
  const GaussianPosterior post = predictive(s, xs);
  CHECK(post.mean.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((post.cov - kernel_matrix(p, xs, xs)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("inducing inputs at the data with the exact posterior match the exact GP") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const KernelParams p = random_params(rng, 2);
    const PointSet x = random_points(rng, 15, 2);
    const Vector y = random_vector(rng, 15);
    const GaussianPosterior at_x = gp_posterior(p, x, y, x);
    VariationalState s;
    s.params = p;
    s.inducing = x;
    s.mean = at_x.mean;
    s.scale_tril = psd_cholesky(at_x.cov).lower();
    const PointSet xs = random_points(rng, 20, 2);
    const GaussianPosterior exact = gp_posterior(p, x, y, xs);
    const GaussianPosterior sparse = predictive(s, xs);
    CHECK((exact.mean - sparse.mean).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((exact.cov - sparse.cov).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("diagonal predictive matches the full marginals and is positive") {
  std::mt19937_64 rng(3);
  const VariationalState s = random_state(rng, 6, 2);
  const PointSet xs = random_points(rng, 30, 2, -4.0, 4.0);
  const GaussianPosterior full = predictive(s, xs);
  const GaussianPosterior diag = predictive(s, xs, CovarianceMode::diagonal);
  CHECK((full.variances() - diag.variances()).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(diag.variances().minCoeff() > 0.0);
}

TEST_CASE("gaussian_kl examples") {
  GaussianPosterior q{Vector::Ones(1), Matrix::Identity(1, 1)};
  GaussianPosterior p{Vector::Zero(1), Matrix::Identity(1, 1)};
  CHECK(gaussian_kl(q, p) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(gaussian_kl(p, p) <= 1e-10);
  GaussianPosterior r{Vector::Zero(2), Matrix::Identity(2, 2)};
  CHECK_THROWS_AS(gaussian_kl(q, r), InputError);
}

TEST_CASE("gaussian_kl is nonnegative and matches a dense evaluation") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix sq = random_spd(rng, 3, 6, 0.1);
    const Matrix sp = random_spd(rng, 3, 6, 0.1);
    const GaussianPosterior q{random_vector(rng, 3), sq};
    const GaussianPosterior p{random_vector(rng, 3), sp};
    const double kl = gaussian_kl(q, p);
    CHECK(kl >= 0.0);
    CHECK(std::abs(kl - dense_kl(q.mean, sq, p.mean, sp)) <= 1e-8 * std::max(1.0, kl));
    CHECK(gaussian_kl(p, p) < 1e-10);
  }
}

TEST_CASE("dedup_union keeps first occurrences and maps rows back") {
  PointSet a(3, 1), b(3, 1);
  a << 0, 1, 2;
  b << 1, 3, 3;
  const EvalPoints e = dedup_union(a, b);
  REQUIRE(e.points.rows() == 4);
  CHECK(e.points(3, 0) == 3.0);
  CHECK(e.second_index == std::vector<Eigen::Index>{-1, -1, -1, 1});
}

TEST_CASE("kl_new_old") {
  std::mt19937_64 rng(5);
  const KernelParams p = random_params(rng, 1);
  const PointSet z = random_points(rng, 4, 1);
  const VariationalState old = prior_matched(p, z);
  const PriorSnapshot prior = snapshot(old);

  SUBCASE("identical states") { CHECK(kl_new_old(old, prior) <= 1e-8); }

  SUBCASE("mean shift against a hand-assembled Gaussian KL") {
    PointSet spread(4, 1);
    spread << -3.0, -1.0, 1.0, 3.0;
    const KernelParams q = KernelParams::rbf(Vector::Constant(1, 0.8), 1.0, 0.1);
    const VariationalState base = prior_matched(q, spread);
    VariationalState moved = base;
    moved.mean = Vector::Constant(4, 0.3);
    const PriorSnapshot base_prior = snapshot(base);
    const PointSet pts = default_kl_points(moved, base_prior);
    // both share covariance K(P,P); only the means differ
    const Matrix kpp = kernel_matrix(q, pts, pts);
    const Matrix kzz = kernel_matrix(q, spread, spread);
    const Vector mq = kernel_matrix(q, pts, spread) * kzz.inverse() * moved.mean;
    const double expected = 0.5 * mq.dot(kpp.inverse() * mq);
    CHECK(kl_new_old(moved, base_prior, pts) == doctest::Approx(expected).epsilon(1e-5));
  }

  SUBCASE("clustered inputs use the KL jitter floor") {
    VariationalState moved = old;
    moved.mean = Vector::Constant(4, 0.3);
    const PointSet pts = default_kl_points(moved, prior);
    const GaussianPosterior q = predictive(moved, pts);
    const GaussianPosterior r = predictive(old, pts);
    const double floor = kl_jitter_policy().relative_ladder.front();
    Matrix sq = q.cov, sp = r.cov;
    sq.diagonal().array() += floor * sq.diagonal().mean();
    sp.diagonal().array() += floor * sp.diagonal().mean();
    CHECK(kl_new_old(moved, prior, pts) == doctest::Approx(dense_kl(q.mean, sq, r.mean, sp)).epsilon(1e-6));
  }

  SUBCASE("invariant to permuting evaluation points") {
    VariationalState moved = old;
    moved.mean = random_vector(rng, 4);
    moved.scale_tril *= 0.7;
    moved.inducing.array() += 0.3;
    const PointSet pts = default_kl_points(moved, prior);
    PointSet rev = pts.colwise().reverse();
    CHECK(kl_new_old(moved, prior, rev) == doctest::Approx(kl_new_old(moved, prior, pts)).epsilon(1e-9));
  }

  SUBCASE("empty evaluation set") { CHECK_THROWS_AS(kl_new_old(old, prior, PointSet(0, 1)), InputError); }
}

TEST_CASE("snapshots are frozen copies") {
  std::mt19937_64 rng(6);
  VariationalState s = random_state(rng, 3, 2);
  const PriorSnapshot snap = snapshot(s, 4);
  const Vector before = snap.state().mean;
  s.mean.array() += 1.0;
  CHECK(snap.state().mean == before);
  CHECK(snap.step() == 4);
  const VariationalState back = restore(snap);
  CHECK(snapshot(back).state() == snap.state());
  CHECK(kl_new_old(back, snap) == 0.0);
}

TEST_CASE("state serialization round trip and size") {
  std::mt19937_64 rng(7);
  const VariationalState s = random_state(rng, 5, 3);
  const std::string bytes = serialize_state(s);
  CHECK(bytes.size() == serialized_state_size(5, 3));
  CHECK(deserialize_state(bytes) == s);
  CHECK(serialize_state(deserialize_state(bytes)) == bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_state(bad), ParseError);
  CHECK_THROWS_AS(deserialize_state(bytes.substr(0, bytes.size() - 3)), ParseError);
}

TEST_CASE("state validation") {
  std::mt19937_64 rng(8);
  VariationalState s = random_state(rng, 3, 1);
  CHECK_NOTHROW(s.validate());
  s.scale_tril(0, 2) = 0.1;
  CHECK_THROWS_AS(s.validate(), InputError);
  s.scale_tril(0, 2) = 0.0;
  s.scale_tril(1, 1) = -0.1;
  CHECK_THROWS_AS(s.validate(), InputError);
}
