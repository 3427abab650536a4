#include "bdc/dcm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bdc/rng.hpp"

namespace bdc {

void validate(const DcmSpec& spec) {
    const int n = spec.n_regions;
    const int m = spec.n_inputs;
    if (n < 1) throw DimensionError("dcm spec: need at least one region");
    if (m < 0) throw DimensionError("dcm spec: negative input count");
    if (spec.a_mask.rows() != n || spec.a_mask.cols() != n) {
        throw DimensionError("dcm spec: a_mask must be n_regions x n_regions");
    }
    for (int i = 0; i < n; ++i) {
        if (!spec.a_mask(i, i)) {
            throw Error("dcm spec: a_mask diagonal (self-connections) must be enabled");
        }
    }
    if (static_cast<int>(spec.b_masks.size()) != m) {
        throw DimensionError("dcm spec: need one b_mask per input");
    }
    for (const auto& bm : spec.b_masks) {
        if (bm.rows() != n || bm.cols() != n) {
            throw DimensionError("dcm spec: b_mask must be n_regions x n_regions");
        }
    }
    if (spec.c_mask.rows() != n || spec.c_mask.cols() != m) {
        throw DimensionError("dcm spec: c_mask must be n_regions x n_inputs");
    }
    if (!(spec.tr > 0.0)) throw Error("dcm spec: tr must be positive");
    if (spec.n_volumes < 1) throw Error("dcm spec: need at least one volume");
    if (static_cast<int>(spec.region_names.size()) != n ||
        static_cast<int>(spec.input_names.size()) != m) {
        throw DimensionError("dcm spec: region/input name counts must match");
    }
}

DcmParams zero_params(const DcmSpec& spec) {
    DcmParams p;
    const int n = spec.n_regions;
    p.a = Eigen::MatrixXd::Zero(n, n);
    p.a_self = Eigen::VectorXd::Zero(n);
    p.b.assign(static_cast<std::size_t>(spec.n_inputs), Eigen::MatrixXd::Zero(n, n));
    p.c = Eigen::MatrixXd::Zero(n, spec.n_inputs);
    p.transit = Eigen::VectorXd::Zero(n);
    p.decay = Eigen::VectorXd::Zero(n);
    p.epsilon = Eigen::VectorXd::Zero(n);
    p.log_precision = Eigen::VectorXd::Zero(n);
    return p;
}

void validate(const DcmSpec& spec, const DcmParams& params) {
    validate(spec);
    const int n = spec.n_regions;
    const int m = spec.n_inputs;
    if (params.a.rows() != n || params.a.cols() != n || params.a_self.size() != n ||
        static_cast<int>(params.b.size()) != m || params.c.rows() != n ||
        params.c.cols() != m || params.transit.size() != n || params.decay.size() != n ||
        params.epsilon.size() != n) {
        throw DimensionError("dcm params: shape does not match spec");
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j && !spec.a_mask(i, j) && params.a(i, j) != 0.0) {
                throw Error("dcm params: off-mask A entry must be exactly 0");
            }
        }
        if (params.a(i, i) != 0.0) {
            throw Error("dcm params: A diagonal is carried in a_self and must be 0 here");
        }
    }
    for (int j = 0; j < m; ++j) {
        if (params.b[static_cast<std::size_t>(j)].rows() != n ||
            params.b[static_cast<std::size_t>(j)].cols() != n) {
            throw DimensionError("dcm params: b matrix shape mismatch");
        }
        for (int r = 0; r < n; ++r) {
            for (int s = 0; s < n; ++s) {
                if (!spec.b_masks[static_cast<std::size_t>(j)](r, s) &&
                    params.b[static_cast<std::size_t>(j)](r, s) != 0.0) {
                    throw Error("dcm params: off-mask B entry must be exactly 0");
                }
            }
        }
    }
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < m; ++j) {
            if (!spec.c_mask(r, j) && params.c(r, j) != 0.0) {
                throw Error("dcm params: off-mask C entry must be exactly 0");
            }
        }
    }
}

HaemodynamicState HaemodynamicState::rest(int n_regions) {
    HaemodynamicState st;
    st.s = Eigen::VectorXd::Zero(n_regions);
    st.f = Eigen::VectorXd::Ones(n_regions);
    st.v = Eigen::VectorXd::Ones(n_regions);
    st.q = Eigen::VectorXd::Ones(n_regions);
    return st;
}

namespace {

// Effective coupling matrix for a fixed input vector u:
// off-diagonal A + sum_j u_j B_j, diagonal -0.5 exp(a_self + sum_j u_j b_j_ii).
Eigen::MatrixXd coupling_matrix(const Eigen::VectorXd& u, const DcmParams& params) {
    const Eigen::Index n = params.a_self.size();
    Eigen::MatrixXd jac = params.a;
    Eigen::VectorXd self_log = params.a_self;
    for (Eigen::Index j = 0; j < u.size(); ++j) {
        if (u[j] != 0.0) {
            jac += u[j] * params.b[static_cast<std::size_t>(j)];
            self_log += u[j] * params.b[static_cast<std::size_t>(j)].diagonal();
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        jac(i, i) = -0.5 * std::exp(self_log[i]);
    }
    return jac;
}

}  // namespace

Eigen::VectorXd neural_derivative(const Eigen::VectorXd& z, const Eigen::VectorXd& u,
                                  const DcmParams& params, const DcmSpec& spec) {
    if (z.size() != spec.n_regions || u.size() != spec.n_inputs) {
        throw DimensionError("neural_derivative: state/input dimension mismatch");
    }
    return coupling_matrix(u, params) * z + params.c * u;
}

HaemodynamicState haemo_derivative(const HaemodynamicState& state, const Eigen::VectorXd& z,
                                   const DcmParams& params, const DcmSpec& spec) {
    const int n = spec.n_regions;
    if (state.s.size() != n || state.f.size() != n || state.v.size() != n ||
        state.q.size() != n || z.size() != n) {
        throw DimensionError("haemo_derivative: state dimension mismatch");
    }
    if (!state.s.allFinite() || !state.f.allFinite() || !state.v.allFinite() ||
        !state.q.allFinite()) {
        throw Error("haemo_derivative: non-finite state");
    }
    const BalloonConstants& bc = spec.balloon;
    HaemodynamicState d;
    d.s.resize(n);
    d.f.resize(n);
    d.v.resize(n);
    d.q.resize(n);
    for (int i = 0; i < n; ++i) {
        const double kappa = bc.kappa0 * std::exp(params.decay[i]);
        const double tau = bc.tau0 * std::exp(params.transit[i]);
        const double f = state.f[i];
        const double v = state.v[i];
        const double q = state.q[i];
        const double extraction = 1.0 - std::pow(1.0 - bc.e0, 1.0 / f);
        const double outflow = std::pow(v, 1.0 / bc.alpha);
        d.s[i] = z[i] - kappa * state.s[i] - bc.gamma * (f - 1.0);
        d.f[i] = state.s[i];
        d.v[i] = (f - outflow) / tau;
        d.q[i] = (f * extraction / bc.e0 - outflow * q / v) / tau;
    }
    return d;
}

Eigen::VectorXd bold_observation(const HaemodynamicState& state, const DcmParams& params,
                                 const DcmSpec& spec) {
    const int n = spec.n_regions;
    const BalloonConstants& bc = spec.balloon;
    const double k1 = 4.3 * bc.nu0 * bc.e0 * bc.te;
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        const double eps = std::exp(params.epsilon[i]);
        const double k2 = eps * bc.r0 * bc.e0 * bc.te;
        const double k3 = 1.0 - eps;
        const double v = state.v[i];
        const double q = state.q[i];
        y[i] = bc.v0 * (k1 * (1.0 - q) + k2 * (1.0 - q / v) + k3 * (1.0 - v));
    }
    return y;
}

int default_steps_per_volume(double tr) {
    const int even = 2 * static_cast<int>(std::ceil(tr / 0.2 - 1e-12));
    return std::max(16, even);
}

namespace {

// State vector layout per region: z, s, ln f, ln v, ln q. The log transform
// keeps f, v, q strictly positive for any finite step.
class DcmOde {
public:
    DcmOde(const DcmSpec& spec, const DcmParams& params, const InputSchedule& inputs)
        : spec_(spec), params_(params), inputs_(inputs), n_(spec.n_regions) {
        const BalloonConstants& bc = spec.balloon;
        kappa_ = (params.decay.array().exp() * bc.kappa0).matrix();
        inv_tau_ = (1.0 / (params.transit.array().exp() * bc.tau0)).matrix();
        log_one_minus_e0_ = std::log(1.0 - bc.e0);
        last_u_col_ = -1;
    }

    int dim() const { return 5 * n_; }

    /// The input is held constant over each integration step (sampled at the
    /// step start), so every RK4 stage sees one smooth right-hand side.
    void set_time(double t) {
        const Eigen::Index col = std::min<Eigen::Index>(
            inputs_.u.cols() - 1,
            static_cast<Eigen::Index>(std::floor(t / inputs_.dt + 1e-9)));
        if (col != last_u_col_) {
            u_ = inputs_.u.col(col);
            coupling_ = coupling_matrix(u_, params_);
            drive_ = params_.c * u_;
            last_u_col_ = col;
        }
    }

    void rhs(const Eigen::VectorXd& x, Eigen::VectorXd& dx) {
        const BalloonConstants& bc = spec_.balloon;
        const auto z = x.head(n_);
        dx.head(n_) = coupling_ * z + drive_;
        for (int i = 0; i < n_; ++i) {
            const double s = x[n_ + i];
            const double lf = x[2 * n_ + i];
            const double lv = x[3 * n_ + i];
            const double lq = x[4 * n_ + i];
            const double f = std::exp(lf);
            const double extraction = 1.0 - std::exp(log_one_minus_e0_ / f);
            // exp((1/alpha - 1) lv) = v^(1/alpha) / v
            const double outflow_over_v = std::exp((1.0 / bc.alpha - 1.0) * lv);
            dx[n_ + i] = z[i] - kappa_[i] * s - bc.gamma * (f - 1.0);
            dx[2 * n_ + i] = s / f;
            dx[3 * n_ + i] = (f * std::exp(-lv) - outflow_over_v) * inv_tau_[i];
            dx[4 * n_ + i] =
                (f * extraction / bc.e0 * std::exp(-lq) - outflow_over_v) * inv_tau_[i];
        }
    }

    Eigen::VectorXd observe(const Eigen::VectorXd& x) const {
        HaemodynamicState st;
        st.s = x.segment(n_, n_);
        st.f = x.segment(2 * n_, n_).array().exp();
        st.v = x.segment(3 * n_, n_).array().exp();
        st.q = x.segment(4 * n_, n_).array().exp();
        return bold_observation(st, params_, spec_);
    }

private:
    const DcmSpec& spec_;
    const DcmParams& params_;
    const InputSchedule& inputs_;
    int n_;
    Eigen::VectorXd kappa_, inv_tau_;
    double log_one_minus_e0_;
    Eigen::Index last_u_col_;
    Eigen::VectorXd u_, drive_;
    Eigen::MatrixXd coupling_;
};

}  // namespace

Eigen::MatrixXd integrate(const DcmSpec& spec, const DcmParams& params,
                          const InputSchedule& inputs, const IntegrateOptions& opts) {
    validate(spec, params);
    if (!(inputs.dt > 0.0)) throw Error("integrate: input schedule dt must be positive");
    if (inputs.u.rows() != spec.n_inputs) {
        throw DimensionError("integrate: input channel count mismatch");
    }
    const double window = spec.tr * spec.n_volumes;
    if (inputs.duration() < window - 1e-9) {
        throw Error("integrate: input schedule does not cover the acquisition window");
    }
    int spv = opts.steps_per_volume > 0 ? opts.steps_per_volume
                                        : default_steps_per_volume(spec.tr);
    if (spv % 2 != 0) ++spv;  // midpoint sampling needs an even count
    const double h = spec.tr / spv;

    DcmOde ode(spec, params, inputs);
    const int dim = ode.dim();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);  // rest: z=s=0, ln f=ln v=ln q=0
    Eigen::VectorXd k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);

    Eigen::MatrixXd out(spec.n_volumes, spec.n_regions);
    long step = 0;
    for (int vol = 0; vol < spec.n_volumes; ++vol) {
        for (int sub = 0; sub < spv; ++sub, ++step) {
            if (sub == spv / 2) out.row(vol) = ode.observe(x);
            ode.set_time(step * h);
            ode.rhs(x, k1);
            tmp = x + 0.5 * h * k1;
            ode.rhs(tmp, k2);
            tmp = x + 0.5 * h * k2;
            ode.rhs(tmp, k3);
            tmp = x + h * k3;
            ode.rhs(tmp, k4);
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!x.allFinite()) {
                throw DivergedModelError("integrate: non-finite state", step + 1);
            }
        }
    }
    return out;
}

Eigen::MatrixXd simulate(const DcmSpec& spec, const DcmParams& params,
                         const InputSchedule& inputs, const Eigen::VectorXd& noise_sd,
                         std::uint64_t seed, const IntegrateOptions& opts) {
    if (noise_sd.size() != spec.n_regions) {
        throw DimensionError("simulate: need one noise SD per region");
    }
    if ((noise_sd.array() < 0.0).any()) throw Error("simulate: noise SD must be >= 0");
    Eigen::MatrixXd y = integrate(spec, params, inputs, opts);
    Rng rng(seed);
    for (int vol = 0; vol < spec.n_volumes; ++vol) {
        for (int r = 0; r < spec.n_regions; ++r) {
            y(vol, r) += noise_sd[r] * rng.gaussian();
        }
    }
    return y;
}

InputSchedule build_inputs(const std::vector<InputBlock>& blocks, double dt,
                           double total_duration, int n_inputs) {
    if (!(dt > 0.0)) throw Error("build_inputs: dt must be positive");
    if (!(total_duration > 0.0)) throw Error("build_inputs: duration must be positive");
    if (n_inputs < 1) throw Error("build_inputs: need at least one input channel");
    const auto nt = static_cast<Eigen::Index>(std::llround(total_duration / dt));
    InputSchedule sched;
    sched.dt = dt;
    sched.u = Eigen::MatrixXd::Zero(n_inputs, nt);
    for (const InputBlock& blk : blocks) {
        if (blk.duration < 0.0) throw Error("build_inputs: negative block duration");
        if (blk.onset < -1e-9) throw Error("build_inputs: negative block onset");
        if (blk.input_index < 0 || blk.input_index >= n_inputs) {
            throw DimensionError("build_inputs: input index out of range");
        }
        if (blk.onset + blk.duration > total_duration + 1e-9) {
            throw Error("build_inputs: block extends beyond the schedule");
        }
        for (Eigen::Index k = 0; k < nt; ++k) {
            const double t = static_cast<double>(k) * dt;
            if (t >= blk.onset - 1e-9 && t < blk.onset + blk.duration - 1e-9) {
                sched.u(blk.input_index, k) = 1.0;  // overlaps saturate
            }
        }
    }
    return sched;
}

std::vector<ParamSlot> param_layout(const DcmSpec& spec) {
    validate(spec);
    std::vector<ParamSlot> slots;
    const int n = spec.n_regions;
    const int m = spec.n_inputs;
    auto region = [&](int i) { return spec.region_names[static_cast<std::size_t>(i)]; };
    auto input = [&](int j) { return spec.input_names[static_cast<std::size_t>(j)]; };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j && spec.a_mask(i, j)) {
                slots.push_back({ParamKind::AOff, i, j, -1,
                                 "A(" + region(i) + "," + region(j) + ")"});
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        slots.push_back({ParamKind::ASelf, i, i, -1, "Aself(" + region(i) + ")"});
    }
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            if (spec.b_masks[static_cast<std::size_t>(j)](i, i)) {
                slots.push_back({ParamKind::BDiag, i, i, j,
                                 "B(" + input(j) + "," + region(i) + ")"});
            }
        }
        for (int i = 0; i < n; ++i) {
            for (int s = 0; s < n; ++s) {
                if (i != s && spec.b_masks[static_cast<std::size_t>(j)](i, s)) {
                    slots.push_back({ParamKind::BOff, i, s, j,
                                     "B(" + input(j) + "," + region(i) + "," + region(s) + ")"});
                }
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            if (spec.c_mask(i, j)) {
                slots.push_back({ParamKind::C, i, -1, j,
                                 "C(" + region(i) + "," + input(j) + ")"});
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        slots.push_back({ParamKind::Transit, i, -1, -1, "transit(" + region(i) + ")"});
    }
    for (int i = 0; i < n; ++i) {
        slots.push_back({ParamKind::Decay, i, -1, -1, "decay(" + region(i) + ")"});
    }
    for (int i = 0; i < n; ++i) {
        slots.push_back({ParamKind::Epsilon, i, -1, -1, "epsilon(" + region(i) + ")"});
    }
    return slots;
}

Eigen::VectorXd pack_params(const DcmSpec& spec, const DcmParams& params) {
    validate(spec, params);
    const auto slots = param_layout(spec);
    Eigen::VectorXd theta(static_cast<Eigen::Index>(slots.size()));
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const ParamSlot& s = slots[k];
        double value = 0.0;
        switch (s.kind) {
            case ParamKind::AOff: value = params.a(s.region, s.source); break;
            case ParamKind::ASelf: value = params.a_self[s.region]; break;
            case ParamKind::BDiag:
            case ParamKind::BOff:
                value = params.b[static_cast<std::size_t>(s.input)](s.region, s.source);
                break;
            case ParamKind::C: value = params.c(s.region, s.input); break;
            case ParamKind::Transit: value = params.transit[s.region]; break;
            case ParamKind::Decay: value = params.decay[s.region]; break;
            case ParamKind::Epsilon: value = params.epsilon[s.region]; break;
        }
        theta[static_cast<Eigen::Index>(k)] = value;
    }
    return theta;
}

DcmParams unpack_params(const DcmSpec& spec, const Eigen::VectorXd& theta) {
    const auto slots = param_layout(spec);
    if (theta.size() != static_cast<Eigen::Index>(slots.size())) {
        throw DimensionError("unpack_params: parameter vector length mismatch");
    }
    DcmParams p = zero_params(spec);
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const ParamSlot& s = slots[k];
        const double value = theta[static_cast<Eigen::Index>(k)];
        switch (s.kind) {
            case ParamKind::AOff: p.a(s.region, s.source) = value; break;
            case ParamKind::ASelf: p.a_self[s.region] = value; break;
            case ParamKind::BDiag:
            case ParamKind::BOff:
                p.b[static_cast<std::size_t>(s.input)](s.region, s.source) = value;
                break;
            case ParamKind::C: p.c(s.region, s.input) = value; break;
            case ParamKind::Transit: p.transit[s.region] = value; break;
            case ParamKind::Decay: p.decay[s.region] = value; break;
            case ParamKind::Epsilon: p.epsilon[s.region] = value; break;
        }
    }
    return p;
}

}  // namespace bdc
