#include <doctest.h>

#include <cmath>

#include "bdc/synth.hpp"
#include "bdc/vl.hpp"
#include "test_support.hpp"

using namespace bdc;
using test::LinearGaussian;

namespace {

/// Wraps a linear regression problem as a one-region forward model with the
/// noise log-precision pinned at its known value.
struct LinearSetup {
    ForwardModel model;
    Eigen::MatrixXd data;
    PriorSpec priors;
    LinearGaussian lg;
};

LinearSetup linear_setup(Rng& rng, Eigen::Index n, Eigen::Index p, double noise_var) {
    LinearSetup s;
    s.lg = test::random_linear_gaussian(rng, n, p, noise_var);
    const Eigen::MatrixXd design = s.lg.design;
    s.model.n_samples = n;
    s.model.n_regions = 1;
    s.model.predict = [design](const Eigen::VectorXd& theta) -> Eigen::MatrixXd {
        return design * theta;
    };
    s.data = s.lg.data;
    s.priors.theta_prior = GaussianDensity{s.lg.prior_mean, s.lg.prior_cov};
    s.priors.lambda_prior =
        GaussianDensity{Eigen::VectorXd::Constant(1, std::log(1.0 / noise_var)),
                        Eigen::MatrixXd::Zero(1, 1)};
    return s;
}

DcmSpec small_spec() {
    DcmSpec spec;
    spec.n_regions = 2;
    spec.n_inputs = 1;
    spec.tr = 2.0;
    spec.n_volumes = 80;
    spec.region_names = {"r1", "r2"};
    spec.input_names = {"u1"};
    spec.a_mask = BoolMatrix::Constant(2, 2, true);
    BoolMatrix diag = BoolMatrix::Constant(2, 2, false);
    diag(0, 0) = diag(1, 1) = true;
    spec.b_masks = {diag};
    spec.c_mask = BoolMatrix::Constant(2, 1, false);
    spec.c_mask(0, 0) = true;
    return spec;
}

}  // namespace

TEST_CASE("free_energy: zero complexity at the priors") {
    Rng rng(1);
    LinearSetup s = linear_setup(rng, 30, 3, 0.25);
    const FreeEnergy fe =
        free_energy(s.model, s.data, s.priors.theta_prior, s.priors.lambda_prior, s.priors);
    CHECK(fe.complexity == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fe.f == doctest::Approx(fe.accuracy).epsilon(1e-12));
}

TEST_CASE("free_energy: matches the conjugate log evidence on linear models") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        LinearSetup s = linear_setup(rng, 40, 3, 0.2);
        const GaussianDensity post = s.lg.posterior();
        const FreeEnergy fe =
            free_energy(s.model, s.data, post, s.priors.lambda_prior, s.priors);
        CHECK(fe.f == doctest::Approx(s.lg.log_evidence()).epsilon(1e-6));
        CHECK(std::abs(fe.f - s.lg.log_evidence()) < 1e-3);
    }
}

TEST_CASE("free_energy: pure noise dimensions lower accuracy only") {
    Rng rng(3);
    LinearSetup s = linear_setup(rng, 30, 3, 0.25);
    const GaussianDensity post = s.lg.posterior();
    const FreeEnergy base =
        free_energy(s.model, s.data, post, s.priors.lambda_prior, s.priors);

    // Same parameters, one extra region of unexplained noise.
    ForwardModel wide;
    wide.n_samples = s.model.n_samples;
    wide.n_regions = 2;
    const Eigen::MatrixXd design = s.lg.design;
    wide.predict = [design](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd out(design.rows(), 2);
        out.col(0) = design * theta;
        out.col(1).setZero();
        return out;
    };
    Eigen::MatrixXd data2(s.model.n_samples, 2);
    data2.col(0) = s.data;
    data2.col(1) = test::random_vector(rng, s.model.n_samples, 0.5);
    PriorSpec priors2 = s.priors;
    priors2.lambda_prior = GaussianDensity{
        Eigen::VectorXd::Constant(2, s.priors.lambda_prior.mean[0]),
        Eigen::MatrixXd::Zero(2, 2)};
    const FreeEnergy noisy = free_energy(wide, data2, post, priors2.lambda_prior, priors2);
    CHECK(noisy.accuracy < base.accuracy);
    CHECK(noisy.complexity == doctest::Approx(base.complexity).epsilon(1e-12));
}

TEST_CASE("fit_model: exact on linear surrogates with known noise") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        LinearSetup s = linear_setup(rng, 50, 4, 0.3);
        const SubjectPosterior sp = fit_model(s.model, s.data, s.priors);
        const GaussianDensity exact = s.lg.posterior();

        const double mean_err =
            (sp.theta_post.mean - exact.mean).norm() / std::max(1.0, exact.mean.norm());
        const double cov_err = (sp.theta_post.covariance - exact.covariance).norm() /
                               exact.covariance.norm();
        CHECK(mean_err < 1e-4);
        CHECK(cov_err < 1e-4);
        CHECK(std::abs(sp.free_energy - s.lg.log_evidence()) < 1e-3);
        CHECK(sp.converged);
    }
}

TEST_CASE("fit_model: estimates the noise precision when lambda is free") {
    Rng rng(5);
    const Eigen::Index n = 400;
    LinearSetup s = linear_setup(rng, n, 3, 0.25);  // true lambda = ln 4 = 1.386
    s.priors.lambda_prior = GaussianDensity{Eigen::VectorXd::Constant(1, 3.0),
                                            Eigen::MatrixXd::Constant(1, 1, 4.0)};
    const SubjectPosterior sp = fit_model(s.model, s.data, s.priors);
    CHECK(sp.lambda_post.mean[0] == doctest::Approx(std::log(4.0)).epsilon(0.15));
    CHECK(sp.lambda_post.covariance(0, 0) > 0.0);
    CHECK(sp.lambda_post.covariance(0, 0) < 0.1);  // ~2/n
}

TEST_CASE("fit_model: fully pinned priors return the prior") {
    Rng rng(6);
    LinearSetup s = linear_setup(rng, 30, 3, 0.25);
    s.priors.theta_prior.covariance.setZero();
    const SubjectPosterior sp = fit_model(s.model, s.data, s.priors);
    CHECK((sp.theta_post.mean - s.priors.theta_prior.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sp.theta_post.covariance.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sp.free_energy == doctest::Approx(sp.accuracy).epsilon(1e-12));
    CHECK(sp.complexity == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sp.converged);
}

TEST_CASE("fit_model: accepted free energies never decrease on a nonlinear model") {
    // Exponential decay regression: y_t = theta0 * exp(-theta1 * t).
    Rng rng(7);
    const Eigen::Index n = 60;
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = 0.1 * static_cast<double>(i);
    ForwardModel model;
    model.n_samples = n;
    model.n_regions = 1;
    model.predict = [t](const Eigen::VectorXd& theta) -> Eigen::MatrixXd {
        return theta[0] * (-theta[1] * t.array()).exp().matrix();
    };
    Eigen::MatrixXd data =
        2.0 * (-0.8 * t.array()).exp().matrix() + 0.05 * test::random_vector(rng, n).array().matrix();

    PriorSpec priors;
    priors.theta_prior = GaussianDensity{Eigen::VectorXd::Zero(2),
                                         Eigen::MatrixXd::Identity(2, 2)};
    priors.lambda_prior = GaussianDensity{Eigen::VectorXd::Constant(1, 2.0),
                                          Eigen::MatrixXd::Constant(1, 1, 1.0)};
    const SubjectPosterior sp = fit_model(model, data, priors);
    REQUIRE(sp.f_trace.size() > 1);
    for (std::size_t i = 1; i < sp.f_trace.size(); ++i) {
        CHECK(sp.f_trace[i] >= sp.f_trace[i - 1] - 1e-9);
    }
    CHECK(sp.converged);
    CHECK(sp.theta_post.mean[0] == doctest::Approx(2.0).epsilon(0.1));
    CHECK(sp.theta_post.mean[1] == doctest::Approx(0.8).epsilon(0.1));
}

TEST_CASE("fit_model: non-finite data fails with diagnostics") {
    Rng rng(8);
    LinearSetup s = linear_setup(rng, 20, 2, 0.25);
    s.data(3, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fit_model(s.model, s.data, s.priors), FitFailure);
}

TEST_CASE("forward_jacobian agrees with a finer central difference") {
    const DcmSpec spec = small_spec();
    const InputSchedule inputs =
        build_inputs({{0, 8.0, 8.0}, {0, 40.0, 8.0}, {0, 80.0, 8.0}, {0, 120.0, 8.0}}, 0.1,
                     spec.tr * spec.n_volumes, 1);
    const auto slots = param_layout(spec);
    const PriorSpec priors = default_priors(spec);

    ForwardModel model;
    model.n_samples = spec.n_volumes;
    model.n_regions = spec.n_regions;
    model.predict = [&spec, &inputs](const Eigen::VectorXd& theta) {
        Eigen::MatrixXd y = integrate(spec, unpack_params(spec, theta), inputs);
        y.rowwise() -= y.colwise().mean().eval();
        return y;
    };

    // Prior mean, except a driving weight so the model responds to the input.
    Eigen::VectorXd at = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(slots.size()));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        if (slots[k].kind == ParamKind::C) at[static_cast<Eigen::Index>(k)] = 0.9;
    }

    const Eigen::VectorXd prior_sd = priors.theta_prior.covariance.diagonal().cwiseSqrt();
    const Eigen::MatrixXd coarse = forward_jacobian(model, at, (1e-3 * prior_sd).eval());
    const Eigen::MatrixXd fine = forward_jacobian(model, at, (1e-4 * prior_sd).eval());
    const double rel = (coarse - fine).norm() / fine.norm();
    CHECK(rel < 1e-4);
}

TEST_CASE("fit: recovers simulated parameters at low noise") {
    const DcmSpec spec = small_spec();
    const double duration = spec.tr * spec.n_volumes;
    std::vector<InputBlock> blocks;
    for (double onset = 8.0; onset + 8.0 < duration; onset += 24.0) {
        blocks.push_back({0, onset, 8.0});
    }
    const InputSchedule inputs = build_inputs(blocks, 0.1, duration, 1);

    DcmParams truth = zero_params(spec);
    truth.a(1, 0) = 0.3;
    truth.b[0].diagonal() << 0.4, 0.25;
    truth.c(0, 0) = 0.8;
    const Eigen::VectorXd noise_sd = Eigen::VectorXd::Constant(2, 0.05);
    const Eigen::MatrixXd data = simulate(spec, truth, inputs, noise_sd, 99);

    const PriorSpec priors = default_priors(spec);
    const SubjectPosterior sp = fit(spec, inputs, data, priors);
    CHECK(sp.converged);

    const Eigen::VectorXd truth_theta = pack_params(spec, truth);
    const auto slots = param_layout(spec);
    int misses = 0;
    for (Eigen::Index k = 0; k < truth_theta.size(); ++k) {
        const double sd = std::sqrt(sp.theta_post.covariance(k, k));
        if (sd == 0.0) continue;
        if (std::abs(sp.theta_post.mean[k] - truth_theta[k]) > 2.0 * sd) ++misses;
    }
    CHECK(misses == 0);

    // The data offsets recorded are the per-region means that were removed.
    CHECK(sp.data_offsets.size() == 2);
    CHECK(sp.data_offsets[0] == doctest::Approx(data.col(0).mean()));
}

TEST_CASE("fit: free energy is invariant to region relabeling") {
    const DcmSpec spec = small_spec();
    const double duration = spec.tr * spec.n_volumes;
    std::vector<InputBlock> blocks;
    for (double onset = 8.0; onset + 8.0 < duration; onset += 24.0) {
        blocks.push_back({0, onset, 8.0});
    }
    const InputSchedule inputs = build_inputs(blocks, 0.1, duration, 1);
    DcmParams truth = zero_params(spec);
    truth.a(1, 0) = 0.3;
    truth.b[0].diagonal() << 0.4, 0.25;
    truth.c(0, 0) = 0.8;
    const Eigen::MatrixXd data =
        simulate(spec, truth, inputs, Eigen::VectorXd::Constant(2, 0.1), 5);

    // Swap the two regions everywhere.
    DcmSpec swapped = spec;
    swapped.region_names = {"r2", "r1"};
    swapped.c_mask.setConstant(false);
    swapped.c_mask(1, 0) = true;
    Eigen::MatrixXd data_swapped(data.rows(), 2);
    data_swapped.col(0) = data.col(1);
    data_swapped.col(1) = data.col(0);

    const SubjectPosterior a = fit(spec, inputs, data, default_priors(spec));
    const SubjectPosterior b = fit(swapped, inputs, data_swapped, default_priors(swapped));
    CHECK(a.free_energy == doctest::Approx(b.free_energy).epsilon(1e-9));
    CHECK(std::abs(a.free_energy - b.free_energy) < 1e-6);

    // Posterior means travel with the labels.
    const auto slots_a = param_layout(spec);
    const auto slots_b = param_layout(swapped);
    for (std::size_t i = 0; i < slots_a.size(); ++i) {
        for (std::size_t j = 0; j < slots_b.size(); ++j) {
            if (slots_a[i].label == slots_b[j].label) {
                CHECK(a.theta_post.mean[static_cast<Eigen::Index>(i)] ==
                      doctest::Approx(b.theta_post.mean[static_cast<Eigen::Index>(j)])
                          .epsilon(1e-6));
            }
        }
    }
}
