#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "bdc/dcm.hpp"
#include "bdc/rng.hpp"
#include "test_support.hpp"

using namespace bdc;

namespace {

DcmSpec three_region_spec() {
    DcmSpec spec;
    spec.n_regions = 3;
    spec.n_inputs = 2;
    spec.tr = 2.0;
    spec.n_volumes = 40;
    spec.region_names = {"r1", "r2", "r3"};
    spec.input_names = {"u1", "u2"};
    spec.a_mask = BoolMatrix::Constant(3, 3, true);
    BoolMatrix diag = BoolMatrix::Constant(3, 3, false);
    for (int i = 0; i < 3; ++i) diag(i, i) = true;
    spec.b_masks = {diag, diag};
    spec.c_mask = BoolMatrix::Constant(3, 2, false);
    spec.c_mask(0, 0) = true;
    return spec;
}

DcmParams random_params(const DcmSpec& spec, Rng& rng) {
    DcmParams p = zero_params(spec);
    for (int i = 0; i < spec.n_regions; ++i) {
        for (int j = 0; j < spec.n_regions; ++j) {
            if (i != j && spec.a_mask(i, j)) p.a(i, j) = 0.2 * rng.gaussian();
        }
        p.a_self[i] = 0.1 * rng.gaussian();
        p.transit[i] = 0.05 * rng.gaussian();
        p.decay[i] = 0.05 * rng.gaussian();
        p.epsilon[i] = 0.05 * rng.gaussian();
    }
    for (int j = 0; j < spec.n_inputs; ++j) {
        for (int i = 0; i < spec.n_regions; ++i) {
            if (spec.b_masks[static_cast<std::size_t>(j)](i, i)) {
                p.b[static_cast<std::size_t>(j)](i, i) = 0.3 * rng.gaussian();
            }
        }
    }
    p.c(0, 0) = 0.8;
    return p;
}

HaemodynamicState random_state(int n, Rng& rng) {
    HaemodynamicState st = HaemodynamicState::rest(n);
    for (int i = 0; i < n; ++i) {
        st.s[i] = 0.3 * rng.gaussian();
        st.f[i] = std::exp(0.2 * rng.gaussian());
        st.v[i] = std::exp(0.2 * rng.gaussian());
        st.q[i] = std::exp(0.2 * rng.gaussian());
    }
    return st;
}

}  // namespace

TEST_CASE("neural_derivative equilibrium and prior-mean decay") {
    const DcmSpec spec = three_region_spec();
    const DcmParams p = zero_params(spec);
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(3);
    const Eigen::VectorXd u0 = Eigen::VectorXd::Zero(2);
    CHECK(neural_derivative(z0, u0, p, spec).cwiseAbs().maxCoeff() == 0.0);

    const Eigen::Vector3d z(0.7, -0.2, 1.1);
    const Eigen::VectorXd dz = neural_derivative(z, u0, p, spec);
    CHECK((dz + 0.5 * z).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("neural_derivative matches a hand-coded evaluation") {
    const DcmSpec spec = three_region_spec();
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const DcmParams p = random_params(spec, rng);
        const Eigen::VectorXd z = test::random_vector(rng, 3);
        Eigen::Vector2d u(rng.uniform() > 0.5 ? 1.0 : 0.0, rng.uniform() > 0.5 ? 1.0 : 0.0);

        // Independent evaluation with explicit scalar loops.
        Eigen::Vector3d expected = Eigen::Vector3d::Zero();
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double coupling;
                if (i == j) {
                    double self_log = p.a_self[i];
                    for (int k = 0; k < 2; ++k) {
                        self_log += u[k] * p.b[static_cast<std::size_t>(k)](i, i);
                    }
                    coupling = -0.5 * std::exp(self_log);
                } else {
                    coupling = p.a(i, j);
                    for (int k = 0; k < 2; ++k) {
                        coupling += u[k] * p.b[static_cast<std::size_t>(k)](i, j);
                    }
                }
                expected[i] += coupling * z[j];
            }
            for (int k = 0; k < 2; ++k) expected[i] += p.c(i, k) * u[k];
        }
        const Eigen::VectorXd got = neural_derivative(z, u, p, spec);
        CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("neural_derivative is linear in z when c = 0") {
    const DcmSpec spec = three_region_spec();
    Rng rng(43);
    DcmParams p = random_params(spec, rng);
    p.c.setZero();
    const Eigen::VectorXd z = test::random_vector(rng, 3);
    Eigen::Vector2d u(1.0, 0.0);
    const double alpha = 2.7;
    const Eigen::VectorXd lhs = neural_derivative((alpha * z).eval(), u, p, spec);
    const Eigen::VectorXd rhs = alpha * neural_derivative(z, u, p, spec);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("neural jacobian is stable at the prior mean") {
    const DcmSpec spec = three_region_spec();
    const DcmParams p = zero_params(spec);
    Eigen::Matrix3d jac;
    const Eigen::VectorXd u0 = Eigen::VectorXd::Zero(2);
    for (int j = 0; j < 3; ++j) {
        jac.col(j) = neural_derivative(Eigen::Vector3d::Unit(j), u0, p, spec);
    }
    const auto eigs = jac.eigenvalues();
    for (int i = 0; i < 3; ++i) CHECK(eigs[i].real() < 0.0);
}

TEST_CASE("haemo_derivative fixed point and signal gain") {
    const DcmSpec spec = three_region_spec();
    const DcmParams p = zero_params(spec);
    const HaemodynamicState rest = HaemodynamicState::rest(3);
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(3);
    const HaemodynamicState d0 = haemo_derivative(rest, z0, p, spec);
    CHECK(d0.s.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d0.f.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d0.v.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d0.q.cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd z1 = Eigen::VectorXd::Zero(3);
    z1[1] = 1.0;
    const HaemodynamicState d1 = haemo_derivative(rest, z1, p, spec);
    CHECK(d1.s[1] == doctest::Approx(1.0));
    CHECK(d1.s[0] == 0.0);

    HaemodynamicState bad = rest;
    bad.f[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(haemo_derivative(bad, z0, p, spec), Error);
}

TEST_CASE("haemo_derivative matches an independent scalar implementation") {
    const DcmSpec spec = three_region_spec();
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
        const DcmParams p = random_params(spec, rng);
        const HaemodynamicState st = random_state(3, rng);
        const Eigen::VectorXd z = test::random_vector(rng, 3);
        const HaemodynamicState d = haemo_derivative(st, z, p, spec);
        for (int i = 0; i < 3; ++i) {
            const double kappa = 0.64 * std::exp(p.decay[i]);
            const double tau = 2.0 * std::exp(p.transit[i]);
            const double fout = std::pow(st.v[i], 1.0 / 0.32);
            const double e_f = 1.0 - std::pow(1.0 - 0.4, 1.0 / st.f[i]);
            CHECK(d.s[i] ==
                  doctest::Approx(z[i] - kappa * st.s[i] - 0.32 * (st.f[i] - 1.0)).epsilon(1e-12));
            CHECK(d.f[i] == doctest::Approx(st.s[i]).epsilon(1e-12));
            CHECK(d.v[i] == doctest::Approx((st.f[i] - fout) / tau).epsilon(1e-12));
            CHECK(d.q[i] == doctest::Approx((st.f[i] * e_f / 0.4 - fout * st.q[i] / st.v[i]) / tau)
                                .epsilon(1e-12));
        }
    }
}

TEST_CASE("bold_observation baseline, washout sign, and formula") {
    const DcmSpec spec = three_region_spec();
    const DcmParams p = zero_params(spec);
    const Eigen::VectorXd at_rest = bold_observation(HaemodynamicState::rest(3), p, spec);
    CHECK(at_rest.cwiseAbs().maxCoeff() == 0.0);

    HaemodynamicState washout = HaemodynamicState::rest(3);
    washout.q[0] = 0.8;  // v = 1, q < 1
    CHECK(bold_observation(washout, p, spec)[0] > 0.0);

    Rng rng(45);
    for (int trial = 0; trial < 10; ++trial) {
        const DcmParams pr = random_params(spec, rng);
        const HaemodynamicState st = random_state(3, rng);
        const Eigen::VectorXd y = bold_observation(st, pr, spec);
        for (int i = 0; i < 3; ++i) {
            const double eps = std::exp(pr.epsilon[i]);
            const double k1 = 4.3 * 40.3 * 0.4 * 0.04;
            const double k2 = eps * 25.0 * 0.4 * 0.04;
            const double k3 = 1.0 - eps;
            const double expected = 4.0 * (k1 * (1.0 - st.q[i]) + k2 * (1.0 - st.q[i] / st.v[i]) +
                                           k3 * (1.0 - st.v[i]));
            CHECK(y[i] == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("integrate: no drive means no output") {
    const DcmSpec spec = three_region_spec();
    DcmParams p = zero_params(spec);
    const InputSchedule inputs =
        build_inputs({{0, 0.0, 8.0}, {0, 24.0, 8.0}}, 0.5, spec.tr * spec.n_volumes, 2);
    p.c.setZero();
    const Eigen::MatrixXd y = integrate(spec, p, inputs);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("integrate: step refinement converges at fourth order") {
    const DcmSpec spec = three_region_spec();
    DcmParams p = zero_params(spec);
    p.a(1, 0) = 0.3;
    p.a(2, 1) = 0.25;
    p.a(0, 2) = -0.2;
    p.b[0].diagonal() << 0.3, -0.2, 0.1;
    p.b[1].diagonal() << -0.1, 0.2, 0.0;
    p.c(0, 0) = 0.8;
    std::vector<InputBlock> blocks;
    for (double onset = 4.0; onset + 8.0 < spec.tr * spec.n_volumes; onset += 20.0) {
        blocks.push_back({0, onset, 8.0});
        blocks.push_back({1, onset, 4.0});
    }
    // dt = 0.5 is divisible by every step size used below, so the input is
    // resolved exactly at each refinement.
    const InputSchedule inputs = build_inputs(blocks, 0.5, spec.tr * spec.n_volumes, 2);

    const Eigen::MatrixXd y1 = integrate(spec, p, inputs, IntegrateOptions{20});
    const Eigen::MatrixXd y2 = integrate(spec, p, inputs, IntegrateOptions{40});
    const Eigen::MatrixXd y4 = integrate(spec, p, inputs, IntegrateOptions{80});
    const Eigen::MatrixXd yr = integrate(spec, p, inputs, IntegrateOptions{320});

    const double e1 = std::sqrt((y1 - yr).squaredNorm() / yr.size());
    const double e2 = std::sqrt((y2 - yr).squaredNorm() / yr.size());
    const double e4 = std::sqrt((y4 - yr).squaredNorm() / yr.size());
    CHECK(e1 / e2 > 8.0);  // nominal ratio 16 for a 4th-order scheme
    CHECK(e2 / e4 > 8.0);
    CHECK(e2 < e1);

    // Halving the default step barely changes the output.
    const int spv = default_steps_per_volume(spec.tr);
    const Eigen::MatrixXd ya = integrate(spec, p, inputs, IntegrateOptions{spv});
    const Eigen::MatrixXd yb = integrate(spec, p, inputs, IntegrateOptions{2 * spv});
    CHECK(std::sqrt((ya - yb).squaredNorm() / ya.size()) < 1e-4);
}

TEST_CASE("integrate: single-region response to a brief boxcar peaks 4-8 s after onset") {
    DcmSpec spec;
    spec.n_regions = 1;
    spec.n_inputs = 1;
    spec.tr = 0.25;  // dense sampling of the response shape
    spec.n_volumes = 160;
    spec.region_names = {"r1"};
    spec.input_names = {"u1"};
    spec.a_mask = BoolMatrix::Constant(1, 1, true);
    spec.b_masks = {BoolMatrix::Constant(1, 1, true)};
    spec.c_mask = BoolMatrix::Constant(1, 1, true);

    DcmParams p = zero_params(spec);
    p.c(0, 0) = 1.0;
    const double onset = 4.0;
    const InputSchedule inputs =
        build_inputs({{0, onset, 2.0}}, 0.05, spec.tr * spec.n_volumes, 1);
    const Eigen::MatrixXd y = integrate(spec, p, inputs);

    Eigen::Index peak;
    const double peak_value = y.col(0).maxCoeff(&peak);
    CHECK(peak_value > 0.0);
    const double peak_time = (static_cast<double>(peak) + 0.5) * spec.tr;
    CHECK(peak_time - onset >= 4.0);
    CHECK(peak_time - onset <= 8.0);
}

TEST_CASE("integrate input-window and divergence errors") {
    const DcmSpec spec = three_region_spec();
    const DcmParams p = zero_params(spec);
    const InputSchedule short_inputs = build_inputs({}, 0.5, 10.0, 2);
    CHECK_THROWS_AS(integrate(spec, p, short_inputs), Error);

    DcmParams unstable = zero_params(spec);
    unstable.a(0, 1) = 4.0;  // strongly positive feedback loop
    unstable.a(1, 0) = 4.0;
    unstable.c(0, 0) = 1.0;
    const InputSchedule inputs =
        build_inputs({{0, 0.0, 70.0}}, 0.5, spec.tr * spec.n_volumes, 2);
    CHECK_THROWS_AS(integrate(spec, unstable, inputs), DivergedModelError);
}

TEST_CASE("simulate: seeding contract and noise statistics") {
    DcmSpec spec;
    spec.n_regions = 1;
    spec.n_inputs = 1;
    spec.tr = 1.0;
    spec.n_volumes = 10000;
    spec.region_names = {"r1"};
    spec.input_names = {"u1"};
    spec.a_mask = BoolMatrix::Constant(1, 1, true);
    spec.b_masks = {BoolMatrix::Constant(1, 1, true)};
    spec.c_mask = BoolMatrix::Constant(1, 1, true);
    DcmParams p = zero_params(spec);
    p.c(0, 0) = 0.7;
    const InputSchedule inputs =
        build_inputs({{0, 10.0, 5000.0}}, 0.5, spec.tr * spec.n_volumes, 1);

    const Eigen::MatrixXd clean = integrate(spec, p, inputs);
    const Eigen::VectorXd sd0 = Eigen::VectorXd::Zero(1);
    CHECK((simulate(spec, p, inputs, sd0, 7) - clean).cwiseAbs().maxCoeff() == 0.0);

    const Eigen::VectorXd sd = Eigen::VectorXd::Constant(1, 0.4);
    const Eigen::MatrixXd noisy = simulate(spec, p, inputs, sd, 7);
    const Eigen::MatrixXd noisy_same = simulate(spec, p, inputs, sd, 7);
    CHECK((noisy - noisy_same).cwiseAbs().maxCoeff() == 0.0);  // bit-identical

    const Eigen::MatrixXd noisy_other = simulate(spec, p, inputs, sd, 8);
    CHECK((noisy - noisy_other).cwiseAbs().maxCoeff() > 0.0);

    const Eigen::VectorXd noise = noisy.col(0) - clean.col(0);
    const double var = noise.squaredNorm() / noise.size();
    CHECK(var == doctest::Approx(0.16).epsilon(0.05));

    const Eigen::VectorXd noise_other = noisy_other.col(0) - clean.col(0);
    CHECK(std::abs(noise.mean() - noise_other.mean()) < 5.0 * 0.4 / std::sqrt(10000.0));

    CHECK_THROWS_AS(simulate(spec, p, inputs, (-sd).eval(), 7), Error);
}

TEST_CASE("build_inputs boxcars") {
    const InputSchedule empty = build_inputs({}, 0.1, 20.0, 2);
    CHECK(empty.u.rows() == 2);
    CHECK(empty.u.cols() == 200);
    CHECK(empty.u.cwiseAbs().maxCoeff() == 0.0);

    const InputSchedule one = build_inputs({{0, 0.0, 8.0}}, 0.1, 20.0, 1);
    CHECK(one.u.sum() == doctest::Approx(80.0));

    // Overlapping blocks saturate at 1.
    const InputSchedule overlap = build_inputs({{0, 2.0, 4.0}, {0, 4.0, 4.0}}, 0.1, 20.0, 1);
    CHECK(overlap.u.maxCoeff() == 1.0);
    CHECK(overlap.u.sum() == doctest::Approx(60.0));

    // Block design with 8 s blocks: block-level boxcars only.
    std::vector<InputBlock> blocks;
    for (double onset = 0.0; onset + 8.0 <= 64.0; onset += 16.0) blocks.push_back({0, onset, 8.0});
    const InputSchedule design = build_inputs(blocks, 0.1, 64.0, 1);
    CHECK(design.u.sum() == doctest::Approx(4 * 80.0));
    CHECK(design.u.maxCoeff() == 1.0);

    CHECK_THROWS_AS(build_inputs({{0, 0.0, -1.0}}, 0.1, 20.0, 1), Error);
    CHECK_THROWS_AS(build_inputs({{0, 15.0, 8.0}}, 0.1, 20.0, 1), Error);
    CHECK_THROWS_AS(build_inputs({{2, 0.0, 1.0}}, 0.1, 20.0, 1), DimensionError);
}

TEST_CASE("parameter packing round-trips and respects masks") {
    const DcmSpec spec = three_region_spec();
    Rng rng(47);
    const DcmParams p = random_params(spec, rng);
    const Eigen::VectorXd theta = pack_params(spec, p);
    const auto slots = param_layout(spec);
    CHECK(theta.size() == static_cast<Eigen::Index>(slots.size()));
    // 6 A off-diagonals + 3 self + 6 B diagonals + 1 C + 9 haemodynamic.
    CHECK(slots.size() == 25);

    const DcmParams q = unpack_params(spec, theta);
    CHECK((pack_params(spec, q) - theta).cwiseAbs().maxCoeff() == 0.0);
    CHECK(q.b[0](0, 1) == 0.0);  // off-mask entries stay exactly zero

    DcmParams bad = p;
    bad.c(1, 1) = 0.5;  // not enabled by the mask
    CHECK_THROWS_AS(validate(spec, bad), Error);
}
