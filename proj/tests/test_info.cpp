#include <doctest.h>

#include <cmath>

#include "bdc/info.hpp"
#include "test_support.hpp"

using namespace bdc;
using test::random_spd;
using test::random_vector;

namespace {

GaussianDensity gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    return GaussianDensity{mean, cov};
}

GaussianDensity isotropic(Eigen::Index d, double var) {
    return gaussian(Eigen::VectorXd::Zero(d),
                    (var * Eigen::VectorXd::Ones(d)).asDiagonal());
}

}  // namespace

TEST_CASE("neg_entropy closed forms") {
    const double one_d = -0.5 * std::log(2.0 * M_PI * std::exp(1.0));
    CHECK(neg_entropy(isotropic(1, 1.0)) == doctest::Approx(one_d).epsilon(1e-12));
    CHECK(neg_entropy(isotropic(1, 1.0)) == doctest::Approx(-1.418939).epsilon(1e-6));
    CHECK(neg_entropy(isotropic(2, 1.0)) == doctest::Approx(2.0 * one_d).epsilon(1e-12));
}

TEST_CASE("neg_entropy matches a direct determinant evaluation in 3-D") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const double c = 0.2 + 3.0 * rng.uniform();
        CHECK(neg_entropy(isotropic(3, c)) ==
              doctest::Approx(-1.5 * std::log(2.0 * M_PI * std::exp(1.0) * c)).epsilon(1e-12));

        // Full random covariance against the raw 3x3 determinant rule.
        const Eigen::MatrixXd s = random_spd(rng, 3);
        const double det = s(0, 0) * (s(1, 1) * s(2, 2) - s(1, 2) * s(2, 1)) -
                           s(0, 1) * (s(1, 0) * s(2, 2) - s(1, 2) * s(2, 0)) +
                           s(0, 2) * (s(1, 0) * s(2, 1) - s(1, 1) * s(2, 0));
        const double expected =
            -0.5 * (3.0 * std::log(2.0 * M_PI * std::exp(1.0)) + std::log(det));
        CHECK(neg_entropy(gaussian(Eigen::VectorXd::Zero(3), s)) ==
              doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("neg_entropy increases when the covariance shrinks") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd s = random_spd(rng, 4);
        const double a = 0.1 + 0.8 * rng.uniform();
        const GaussianDensity wide = gaussian(Eigen::VectorXd::Zero(4), s);
        const GaussianDensity narrow = gaussian(Eigen::VectorXd::Zero(4), (a * s).eval());
        CHECK(neg_entropy(narrow) > neg_entropy(wide));
    }
}

TEST_CASE("neg_entropy rejects degenerate covariances") {
    CHECK_THROWS_AS(neg_entropy(isotropic(2, 0.0)), DegenerateDensityError);
    GaussianDensity bad = isotropic(2, 1.0);
    bad.mean.resize(3);
    bad.mean.setZero();
    CHECK_THROWS_AS(neg_entropy(bad), DimensionError);
}

TEST_CASE("kl_gaussian identities") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const GaussianDensity q = gaussian(random_vector(rng, 3), random_spd(rng, 3));
        CHECK(std::abs(kl_gaussian(q, q)) <= 1e-12);
    }
    const GaussianDensity q1 = gaussian(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1));
    const GaussianDensity p1 = gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Ones(1, 1));
    CHECK(kl_gaussian(q1, p1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl_gaussian matches a Monte-Carlo estimate") {
    Rng rng(2024);
    const GaussianDensity q = gaussian(random_vector(rng, 3), random_spd(rng, 3));
    const GaussianDensity p = gaussian(random_vector(rng, 3), random_spd(rng, 3));
    const double exact = kl_gaussian(q, p);

    const Eigen::MatrixXd chol = q.covariance.llt().matrixL();
    const int n = 1000000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd x = q.mean + chol * random_vector(rng, 3);
        const double term = test::log_normal_pdf(x, q.mean, q.covariance) -
                            test::log_normal_pdf(x, p.mean, p.covariance);
        sum += term;
        sum_sq += term * term;
    }
    const double mc = sum / n;
    const double se = std::sqrt((sum_sq / n - mc * mc) / n);
    CHECK(std::abs(exact - mc) < 3.0 * se);
}

TEST_CASE("kl_gaussian error paths") {
    const GaussianDensity q3 = isotropic(3, 1.0);
    const GaussianDensity p2 = isotropic(2, 1.0);
    CHECK_THROWS_AS(kl_gaussian(q3, p2), DimensionError);
    CHECK_THROWS_AS(kl_gaussian(p2, isotropic(2, 0.0)), DegenerateDensityError);
}

TEST_CASE("kl_categorical closed forms") {
    Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(10);
    one_hot[0] = 1.0;
    CHECK(kl_categorical({one_hot}) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(kl_categorical({one_hot}) == doctest::Approx(2.302585).epsilon(1e-6));

    CHECK(std::abs(kl_categorical({Eigen::VectorXd::Constant(10, 0.1)})) <= 1e-12);

    Eigen::VectorXd two = Eigen::VectorXd::Zero(10);
    two[0] = two[1] = 0.5;
    CHECK(kl_categorical({two}) == doctest::Approx(1.609438).epsilon(1e-6));
}

TEST_CASE("kl_categorical bounds and maximiser") {
    Rng rng(5);
    const int k = 8;
    Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(k);
    one_hot[3] = 1.0;
    const double max_val = kl_categorical({one_hot});
    CHECK(max_val == doctest::Approx(std::log(double(k))));
    for (int trial = 0; trial < 25; ++trial) {
        Eigen::VectorXd p(k);
        for (int i = 0; i < k; ++i) p[i] = rng.uniform();
        p /= p.sum();
        const double v = kl_categorical({p});
        CHECK(v >= 0.0);
        CHECK(v <= max_val + 1e-12);
    }
    CHECK_THROWS_AS(kl_categorical({Eigen::VectorXd(0)}), DimensionError);
    CHECK_THROWS_AS(kl_categorical({Eigen::VectorXd::Constant(4, 0.3)}), Error);
}

TEST_CASE("log_bayes_factor and prob_from_nats") {
    CHECK(log_bayes_factor(3.0, 0.0) == 3.0);
    CHECK(log_bayes_factor(1.25, 1.25) == 0.0);
    CHECK(prob_from_nats(0.0) == doctest::Approx(0.5).epsilon(1e-15));

    // The published nats -> probability conversions.
    CHECK(prob_from_nats(1.64) == doctest::Approx(0.8375).epsilon(5e-4));
    CHECK(prob_from_nats(3.69) == doctest::Approx(0.9756).epsilon(5e-4));
    CHECK(prob_from_nats(2.65) == doctest::Approx(0.9341).epsilon(5e-4));
    CHECK(prob_from_nats(0.69) == doctest::Approx(0.666).epsilon(1e-3));
    CHECK(prob_from_nats(0.99) == doctest::Approx(0.729).epsilon(1e-3));
    CHECK(prob_from_nats(0.17) == doctest::Approx(0.542).epsilon(1e-3));

    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const double f1 = 4.0 * rng.gaussian();
        const double f2 = 4.0 * rng.gaussian();
        Eigen::Vector2d f(f1, f2);
        CHECK(prob_from_nats(log_bayes_factor(f1, f2)) ==
              doctest::Approx(posterior_over_models(f).probabilities[0]).epsilon(1e-12));
    }
}

TEST_CASE("posterior_over_models") {
    Eigen::Vector2d equal(1.7, 1.7);
    CHECK(posterior_over_models(equal).probabilities[0] == doctest::Approx(0.5));

    Eigen::Vector2d paper(1.64, 0.0);
    CHECK(posterior_over_models(paper).probabilities[0] == doctest::Approx(0.8375).epsilon(5e-4));
    Eigen::Vector2d weak(0.17, 0.0);
    CHECK(posterior_over_models(weak).probabilities[0] == doctest::Approx(0.5424).epsilon(5e-4));
    CHECK(posterior_over_models(weak).probabilities[1] == doctest::Approx(0.4576).epsilon(5e-4));

    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXd f = random_vector(rng, 6, 3.0);
        const double c = 10.0 * rng.gaussian();
        const Eigen::VectorXd p0 = posterior_over_models(f).probabilities;
        const Eigen::VectorXd p1 =
            posterior_over_models((f.array() + c).matrix()).probabilities;
        CHECK((p0 - p1).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK_THROWS_AS(posterior_over_models(Eigen::VectorXd(0)), DimensionError);
}

TEST_CASE("entropy difference equals complexity difference under flat priors") {
    // Two posteriors with a common mean, prior covariance s*I with s = 1e6:
    // the KL difference collapses to the entropy difference.
    Rng rng(31);
    const Eigen::VectorXd mean = random_vector(rng, 3);
    const GaussianDensity q1 = gaussian(mean, random_spd(rng, 3));
    const GaussianDensity q2 = gaussian(mean, random_spd(rng, 3));
    const GaussianDensity flat =
        gaussian(random_vector(rng, 3), (1e6 * Eigen::MatrixXd::Identity(3, 3)).eval());
    const double kl_diff = kl_gaussian(q1, flat) - kl_gaussian(q2, flat);
    const double ent_diff = neg_entropy(q1) - neg_entropy(q2);
    CHECK(std::abs(kl_diff - ent_diff) < 1e-3);
}

TEST_CASE("gaussian density invariant checks") {
    GaussianDensity asym = isotropic(2, 1.0);
    asym.covariance(0, 1) = 0.5;  // not symmetric
    CHECK_THROWS_AS(validate(asym), DegenerateDensityError);

    GaussianDensity indefinite = isotropic(2, 1.0);
    indefinite.covariance << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(validate(indefinite), DegenerateDensityError);
}
