#include "bdc/vl.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

namespace bdc {

namespace {

std::vector<Eigen::Index> free_indices(const GaussianDensity& prior) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < prior.dim(); ++i) {
        if (prior.covariance(i, i) > 0.0) idx.push_back(i);
    }
    return idx;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m(idx[i], idx[j]);
        }
    }
    return out;
}

Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
    Eigen::VectorXd out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out[static_cast<Eigen::Index>(i)] = v[idx[i]];
    }
    return out;
}

/// KL(q || p) over the dimensions where the prior has nonzero variance; the
/// remaining dimensions must agree exactly (they are pinned).
double kl_gaussian_pinned(const GaussianDensity& q, const GaussianDensity& p,
                          const std::vector<Eigen::Index>& free) {
    if (q.dim() != p.dim()) throw DimensionError("kl: dimension mismatch");
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < p.dim(); ++i) {
        if (at < free.size() && free[at] == i) {
            ++at;
            continue;
        }
        if (std::abs(q.mean[i] - p.mean[i]) > 1e-9 || std::abs(q.covariance(i, i)) > 1e-12) {
            throw DegenerateDensityError(
                "kl: posterior must equal the prior on zero-variance parameters");
        }
    }
    if (free.empty()) return 0.0;
    GaussianDensity qf{select(q.mean, free), select(q.covariance, free)};
    GaussianDensity pf{select(p.mean, free), select(p.covariance, free)};
    return kl_gaussian(qf, pf);
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

/// Central finite-difference Jacobian of the flattened prediction over the
/// free parameter dimensions. Step per dimension: step_scale * prior SD.
Eigen::MatrixXd fd_jacobian(const ForwardModel& model, const Eigen::VectorXd& at,
                            const GaussianDensity& prior,
                            const std::vector<Eigen::Index>& free, double step_scale) {
    const Eigen::Index n_total = model.n_samples * model.n_regions;
    Eigen::MatrixXd jac(n_total, static_cast<Eigen::Index>(free.size()));
    Eigen::VectorXd theta = at;
    for (std::size_t k = 0; k < free.size(); ++k) {
        const Eigen::Index i = free[k];
        const double step = step_scale * std::sqrt(prior.covariance(i, i));
        theta[i] = at[i] + step;
        const Eigen::VectorXd hi = flatten(model.predict(theta));
        theta[i] = at[i] - step;
        const Eigen::VectorXd lo = flatten(model.predict(theta));
        theta[i] = at[i];
        jac.col(static_cast<Eigen::Index>(k)) = (hi - lo) / (2.0 * step);
    }
    return jac;
}

struct Workspace {
    const ForwardModel* model = nullptr;
    Eigen::VectorXd data_flat;
    const PriorSpec* priors = nullptr;
    std::vector<Eigen::Index> theta_free;
    std::vector<Eigen::Index> lambda_free;
    Eigen::MatrixXd prior_prec_ff;         // theta prior precision, free block
    Eigen::MatrixXd lambda_prior_prec_ff;  // lambda prior precision, free block
    Eigen::Index n_samples = 0;
    Eigen::Index n_regions = 0;

    Eigen::VectorXd region_residual_sq(const Eigen::VectorXd& resid) const {
        Eigen::VectorXd out(n_regions);
        for (Eigen::Index r = 0; r < n_regions; ++r) {
            out[r] = resid.segment(r * n_samples, n_samples).squaredNorm();
        }
        return out;
    }
};

struct Evaluation {
    Eigen::VectorXd resid;      // data - prediction, flattened region-major
    Eigen::MatrixXd jac;        // n_total x n_free
    Eigen::MatrixXd s_cov;      // conditional parameter covariance, free block
    Eigen::MatrixXd v_cov;      // log-precision covariance, free block
    Eigen::VectorXd w;          // per region: |e_r|^2 + tr(J_r' J_r S)
    FreeEnergy fe;
};

/// Free energy and the Gaussian covariances at a given (theta mean, lambda
/// mean), with the Jacobian and residuals already computed at that point.
Evaluation evaluate(const Workspace& ws, const Eigen::VectorXd& theta,
                    const Eigen::VectorXd& resid, const Eigen::MatrixXd& jac,
                    const Eigen::VectorXd& lambda) {
    Evaluation ev;
    ev.resid = resid;
    ev.jac = jac;
    const Eigen::Index nf = static_cast<Eigen::Index>(ws.theta_free.size());
    const Eigen::VectorXd prec = lambda.array().exp();
    const Eigen::VectorXd esq = ws.region_residual_sq(resid);

    // Conditional covariance of the free parameters given lambda.
    Eigen::MatrixXd hess = ws.prior_prec_ff;
    for (Eigen::Index r = 0; r < ws.n_regions; ++r) {
        const auto jr = jac.middleRows(r * ws.n_samples, ws.n_samples);
        hess.noalias() += prec[r] * (jr.transpose() * jr);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (nf > 0 && llt.info() != Eigen::Success) {
        throw DegenerateDensityError("fit: conditional precision not positive definite");
    }
    ev.s_cov = nf > 0 ? llt.solve(Eigen::MatrixXd::Identity(nf, nf)) : Eigen::MatrixXd(0, 0);

    ev.w.resize(ws.n_regions);
    for (Eigen::Index r = 0; r < ws.n_regions; ++r) {
        const auto jr = jac.middleRows(r * ws.n_samples, ws.n_samples);
        double trace_term = 0.0;
        if (nf > 0) trace_term = (jr * ev.s_cov).cwiseProduct(jr).sum();
        ev.w[r] = esq[r] + trace_term;
    }

    // Laplace covariance of the free log-precisions.
    const Eigen::Index lf = static_cast<Eigen::Index>(ws.lambda_free.size());
    if (lf > 0) {
        Eigen::MatrixXd lh = ws.lambda_prior_prec_ff;
        for (Eigen::Index k = 0; k < lf; ++k) {
            const Eigen::Index r = ws.lambda_free[static_cast<std::size_t>(k)];
            lh(k, k) += 0.5 * prec[r] * ev.w[r];
        }
        ev.v_cov = lh.llt().solve(Eigen::MatrixXd::Identity(lf, lf));
    } else {
        ev.v_cov = Eigen::MatrixXd(0, 0);
    }

    const double n_total = static_cast<double>(ws.n_samples * ws.n_regions);
    double acc = -0.5 * n_total * kLn2Pi;
    for (Eigen::Index r = 0; r < ws.n_regions; ++r) {
        acc += 0.5 * static_cast<double>(ws.n_samples) * lambda[r] - 0.5 * prec[r] * ev.w[r];
    }

    GaussianDensity q_theta{theta, Eigen::MatrixXd::Zero(theta.size(), theta.size())};
    for (std::size_t i = 0; i < ws.theta_free.size(); ++i) {
        for (std::size_t j = 0; j < ws.theta_free.size(); ++j) {
            q_theta.covariance(ws.theta_free[i], ws.theta_free[j]) =
                ev.s_cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    GaussianDensity q_lambda{lambda, Eigen::MatrixXd::Zero(lambda.size(), lambda.size())};
    for (std::size_t i = 0; i < ws.lambda_free.size(); ++i) {
        for (std::size_t j = 0; j < ws.lambda_free.size(); ++j) {
            q_lambda.covariance(ws.lambda_free[i], ws.lambda_free[j]) =
                ev.v_cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    const double comp = kl_gaussian_pinned(q_theta, ws.priors->theta_prior, ws.theta_free) +
                        kl_gaussian_pinned(q_lambda, ws.priors->lambda_prior, ws.lambda_free);
    ev.fe.accuracy = acc;
    ev.fe.complexity = comp;
    ev.fe.f = acc - comp;
    if (!std::isfinite(ev.fe.f)) throw Error("fit: non-finite free energy");
    return ev;
}

Evaluation evaluate_fresh(const Workspace& ws, const Eigen::VectorXd& theta,
                          const Eigen::VectorXd& lambda, double jac_step) {
    const Eigen::VectorXd pred = flatten(ws.model->predict(theta));
    if (!pred.allFinite()) {
        throw DivergedModelError("fit: non-finite prediction", -1);
    }
    const Eigen::MatrixXd jac =
        fd_jacobian(*ws.model, theta, ws.priors->theta_prior, ws.theta_free, jac_step);
    if (!jac.allFinite()) {
        throw DivergedModelError("fit: non-finite jacobian", -1);
    }
    return evaluate(ws, theta, ws.data_flat - pred, jac, lambda);
}

/// Newton ascent of the lambda part of the free energy with backtracking;
/// only accepts changes that do not decrease the canonical free energy.
void update_lambda(const Workspace& ws, const Eigen::VectorXd& theta, Eigen::VectorXd& lambda,
                   Evaluation& ev, const FitOptions& opts) {
    const Eigen::Index lf = static_cast<Eigen::Index>(ws.lambda_free.size());
    if (lf == 0) return;
    const GaussianDensity& lp = ws.priors->lambda_prior;
    const double n_s = static_cast<double>(ws.n_samples);
    for (int it = 0; it < opts.lambda_newton_max; ++it) {
        Eigen::VectorXd grad(lf);
        Eigen::MatrixXd hess = ws.lambda_prior_prec_ff;
        const Eigen::VectorXd dl = select(lambda, ws.lambda_free) - select(lp.mean, ws.lambda_free);
        const Eigen::VectorXd prior_pull = ws.lambda_prior_prec_ff * dl;
        for (Eigen::Index k = 0; k < lf; ++k) {
            const Eigen::Index r = ws.lambda_free[static_cast<std::size_t>(k)];
            const double ew = std::exp(lambda[r]) * ev.w[r];
            grad[k] = -0.5 * ew + 0.5 * n_s - prior_pull[k];
            hess(k, k) += 0.5 * ew;
        }
        Eigen::VectorXd step = hess.ldlt().solve(grad);
        const double maxstep = step.cwiseAbs().maxCoeff();
        if (maxstep > 2.0) step *= 2.0 / maxstep;
        if (maxstep < opts.lambda_newton_tol) break;

        bool accepted = false;
        for (double scale = 1.0; scale >= 1.0 / 32.0; scale /= 2.0) {
            Eigen::VectorXd trial = lambda;
            for (Eigen::Index k = 0; k < lf; ++k) {
                trial[ws.lambda_free[static_cast<std::size_t>(k)]] += scale * step[k];
            }
            try {
                Evaluation cand = evaluate(ws, theta, ev.resid, ev.jac, trial);
                if (cand.fe.f >= ev.fe.f) {
                    lambda = trial;
                    ev = cand;
                    accepted = true;
                    break;
                }
            } catch (const Error&) {
                // overshoot into overflow; shrink the step
            }
        }
        if (!accepted) break;
    }
}

}  // namespace

Eigen::MatrixXd forward_jacobian(const ForwardModel& model, const Eigen::VectorXd& at,
                                 const Eigen::VectorXd& steps) {
    if (steps.size() != at.size()) {
        throw DimensionError("forward_jacobian: one step per parameter");
    }
    Eigen::MatrixXd jac =
        Eigen::MatrixXd::Zero(model.n_samples * model.n_regions, at.size());
    Eigen::VectorXd theta = at;
    for (Eigen::Index k = 0; k < at.size(); ++k) {
        if (steps[k] <= 0.0) continue;
        theta[k] = at[k] + steps[k];
        const Eigen::VectorXd hi = flatten(model.predict(theta));
        theta[k] = at[k] - steps[k];
        const Eigen::VectorXd lo = flatten(model.predict(theta));
        theta[k] = at[k];
        jac.col(k) = (hi - lo) / (2.0 * steps[k]);
    }
    return jac;
}

PriorSpec default_priors(const DcmSpec& spec) {
    const auto slots = param_layout(spec);
    const Eigen::Index p = static_cast<Eigen::Index>(slots.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd var(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        switch (slots[static_cast<std::size_t>(i)].kind) {
            case ParamKind::AOff: var[i] = 1.0 / 16.0; break;
            case ParamKind::ASelf: var[i] = 1.0 / 64.0; break;
            case ParamKind::BDiag:
            case ParamKind::BOff: var[i] = 1.0; break;
            case ParamKind::C: var[i] = 1.0; break;
            case ParamKind::Transit:
            case ParamKind::Decay:
            case ParamKind::Epsilon: var[i] = 1.0 / 256.0; break;
        }
    }
    PriorSpec priors;
    priors.theta_prior = GaussianDensity{mean, var.asDiagonal()};
    priors.lambda_prior = GaussianDensity{
        Eigen::VectorXd::Constant(spec.n_regions, 4.0),
        (Eigen::VectorXd::Constant(spec.n_regions, 1.0 / 16.0)).asDiagonal()};
    return priors;
}

FreeEnergy free_energy(const ForwardModel& model, const Eigen::MatrixXd& data,
                       const GaussianDensity& q, const GaussianDensity& lambda_q,
                       const PriorSpec& priors, double jacobian_step) {
    if (data.rows() != model.n_samples || data.cols() != model.n_regions) {
        throw DimensionError("free_energy: data shape does not match the model");
    }
    if (q.dim() != priors.theta_prior.dim() || lambda_q.dim() != priors.lambda_prior.dim()) {
        throw DimensionError("free_energy: density dimensions do not match the priors");
    }
    Workspace ws;
    ws.model = &model;
    ws.data_flat = flatten(data);
    ws.priors = &priors;
    ws.theta_free = free_indices(priors.theta_prior);
    ws.lambda_free = free_indices(priors.lambda_prior);
    ws.prior_prec_ff = select(priors.theta_prior.covariance, ws.theta_free)
                           .llt()
                           .solve(Eigen::MatrixXd::Identity(
                               static_cast<Eigen::Index>(ws.theta_free.size()),
                               static_cast<Eigen::Index>(ws.theta_free.size())));
    ws.lambda_prior_prec_ff = select(priors.lambda_prior.covariance, ws.lambda_free)
                                  .llt()
                                  .solve(Eigen::MatrixXd::Identity(
                                      static_cast<Eigen::Index>(ws.lambda_free.size()),
                                      static_cast<Eigen::Index>(ws.lambda_free.size())));
    ws.n_samples = model.n_samples;
    ws.n_regions = model.n_regions;

    const Eigen::VectorXd pred = flatten(model.predict(q.mean));
    if (!pred.allFinite()) throw DivergedModelError("free_energy: non-finite prediction", -1);
    const Eigen::MatrixXd jac =
        fd_jacobian(model, q.mean, priors.theta_prior, ws.theta_free, jacobian_step);
    const Eigen::VectorXd resid = ws.data_flat - pred;

    // Accuracy at the supplied densities; covariances are taken from q, not
    // refit. Complexity is the exact KL from the priors.
    const Eigen::VectorXd prec = lambda_q.mean.array().exp();
    Eigen::VectorXd w(ws.n_regions);
    for (Eigen::Index r = 0; r < ws.n_regions; ++r) {
        const auto jr = jac.middleRows(r * ws.n_samples, ws.n_samples);
        const Eigen::MatrixXd s_ff = select(q.covariance, ws.theta_free);
        double trace_term = ws.theta_free.empty() ? 0.0 : (jr * s_ff).cwiseProduct(jr).sum();
        w[r] = resid.segment(r * ws.n_samples, ws.n_samples).squaredNorm() + trace_term;
    }
    const double n_total = static_cast<double>(ws.n_samples * ws.n_regions);
    double acc = -0.5 * n_total * kLn2Pi;
    for (Eigen::Index r = 0; r < ws.n_regions; ++r) {
        acc += 0.5 * static_cast<double>(ws.n_samples) * lambda_q.mean[r] - 0.5 * prec[r] * w[r];
    }
    const double comp = kl_gaussian_pinned(q, priors.theta_prior, ws.theta_free) +
                        kl_gaussian_pinned(lambda_q, priors.lambda_prior, ws.lambda_free);
    return FreeEnergy{acc - comp, acc, comp};
}

SubjectPosterior fit_model(const ForwardModel& model, const Eigen::MatrixXd& data,
                           const PriorSpec& priors, const FitOptions& opts) {
    if (data.rows() != model.n_samples || data.cols() != model.n_regions) {
        throw DimensionError("fit: data shape does not match the model");
    }
    if (priors.lambda_prior.dim() != model.n_regions) {
        throw DimensionError("fit: need one log-precision prior per region");
    }
    validate(priors.theta_prior);
    validate(priors.lambda_prior);

    Workspace ws;
    ws.model = &model;
    ws.data_flat = flatten(data);
    ws.priors = &priors;
    ws.theta_free = free_indices(priors.theta_prior);
    ws.lambda_free = free_indices(priors.lambda_prior);
    const Eigen::Index nf = static_cast<Eigen::Index>(ws.theta_free.size());
    const Eigen::Index lf = static_cast<Eigen::Index>(ws.lambda_free.size());
    ws.prior_prec_ff =
        select(priors.theta_prior.covariance, ws.theta_free)
            .llt()
            .solve(Eigen::MatrixXd::Identity(nf, nf));
    ws.lambda_prior_prec_ff =
        select(priors.lambda_prior.covariance, ws.lambda_free)
            .llt()
            .solve(Eigen::MatrixXd::Identity(lf, lf));
    ws.n_samples = model.n_samples;
    ws.n_regions = model.n_regions;

    Eigen::VectorXd theta = priors.theta_prior.mean;
    Eigen::VectorXd lambda = priors.lambda_prior.mean;

    Evaluation ev;
    try {
        ev = evaluate_fresh(ws, theta, lambda, opts.jacobian_step);
    } catch (const Error& e) {
        throw FitFailure(std::string("fit: initial evaluation failed: ") + e.what(),
                         std::numeric_limits<double>::quiet_NaN(), 0);
    }
    update_lambda(ws, theta, lambda, ev, opts);

    SubjectPosterior out;
    out.f_trace.push_back(ev.fe.f);

    double damping = opts.lm_damping0;
    int small_change_streak = 0;
    int iter = 0;
    for (iter = 1; iter <= opts.max_iterations && nf > 0; ++iter) {
        const double f_before = ev.fe.f;

        // Gauss-Newton direction from the current evaluation.
        const Eigen::VectorXd prec = lambda.array().exp();
        Eigen::MatrixXd hess = ws.prior_prec_ff;
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(nf);
        for (Eigen::Index r = 0; r < ws.n_regions; ++r) {
            const auto jr = ev.jac.middleRows(r * ws.n_samples, ws.n_samples);
            hess.noalias() += prec[r] * (jr.transpose() * jr);
            grad.noalias() += prec[r] * (jr.transpose() * ev.resid.segment(r * ws.n_samples, ws.n_samples));
        }
        const Eigen::VectorXd dm = select(theta, ws.theta_free) -
                                   select(priors.theta_prior.mean, ws.theta_free);
        grad -= ws.prior_prec_ff * dm;

        bool accepted = false;
        bool plateau = false;
        while (true) {
            Eigen::MatrixXd damped = hess;
            damped.diagonal() += damping * hess.diagonal();
            const Eigen::VectorXd step = damped.ldlt().solve(grad);
            Eigen::VectorXd trial = theta;
            for (Eigen::Index k = 0; k < nf; ++k) {
                trial[ws.theta_free[static_cast<std::size_t>(k)]] += step[k];
            }

            bool trial_ok = true;
            double f_gap = std::numeric_limits<double>::infinity();
            Evaluation cand;
            try {
                // Cheap screen with the current jacobian before paying for a
                // fresh one at the trial point.
                const Eigen::VectorXd pred = flatten(model.predict(trial));
                if (!pred.allFinite()) throw DivergedModelError("diverged", -1);
                const Evaluation screen = evaluate(ws, trial, ws.data_flat - pred, ev.jac, lambda);
                f_gap = screen.fe.f - ev.fe.f;
                if (screen.fe.f < ev.fe.f) {
                    trial_ok = false;
                } else {
                    cand = evaluate_fresh(ws, trial, lambda, opts.jacobian_step);
                    f_gap = cand.fe.f - ev.fe.f;
                    trial_ok = cand.fe.f >= ev.fe.f;
                }
            } catch (const DivergedModelError&) {
                trial_ok = false;
                f_gap = -std::numeric_limits<double>::infinity();
            } catch (const DegenerateDensityError&) {
                trial_ok = false;
            }

            if (trial_ok) {
                theta = trial;
                ev = cand;
                accepted = true;
                damping = std::max(damping / 2.0, 1.0 / 1024.0);
                break;
            }
            damping *= 2.0;
            if (damping > opts.lm_damping_max) {
                if (std::isfinite(f_gap) && std::abs(f_gap) < opts.f_tolerance) {
                    plateau = true;  // no productive step exists; treat as converged
                    break;
                }
                throw FitFailure("fit: step rejected at maximum regularization",
                                 ev.fe.f, iter);
            }
        }

        if (accepted) update_lambda(ws, theta, lambda, ev, opts);
        out.f_trace.push_back(ev.fe.f);

        const double df = ev.fe.f - f_before;
        if (plateau || std::abs(df) < opts.f_tolerance) {
            if (++small_change_streak >= opts.convergence_window) {
                out.converged = true;
                break;
            }
        } else {
            small_change_streak = 0;
        }
    }
    out.n_iterations = std::min(iter, opts.max_iterations);
    if (nf == 0) out.converged = true;

    out.theta_post.mean = theta;
    out.theta_post.covariance = Eigen::MatrixXd::Zero(theta.size(), theta.size());
    for (std::size_t i = 0; i < ws.theta_free.size(); ++i) {
        for (std::size_t j = 0; j < ws.theta_free.size(); ++j) {
            out.theta_post.covariance(ws.theta_free[i], ws.theta_free[j]) =
                ev.s_cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    out.lambda_post.mean = lambda;
    out.lambda_post.covariance = Eigen::MatrixXd::Zero(lambda.size(), lambda.size());
    for (std::size_t i = 0; i < ws.lambda_free.size(); ++i) {
        for (std::size_t j = 0; j < ws.lambda_free.size(); ++j) {
            out.lambda_post.covariance(ws.lambda_free[i], ws.lambda_free[j]) =
                ev.v_cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    out.free_energy = ev.fe.f;
    out.accuracy = ev.fe.accuracy;
    out.complexity = ev.fe.complexity;
    out.data_offsets = Eigen::VectorXd::Zero(model.n_regions);
    return out;
}

SubjectPosterior fit(const DcmSpec& spec, const InputSchedule& inputs,
                     const Eigen::MatrixXd& data, const PriorSpec& priors,
                     const FitOptions& opts) {
    validate(spec);
    if (data.rows() != spec.n_volumes || data.cols() != spec.n_regions) {
        throw DimensionError("fit: data must be n_volumes x n_regions");
    }
    const auto slots = param_layout(spec);
    if (priors.theta_prior.dim() != static_cast<Eigen::Index>(slots.size())) {
        throw DimensionError("fit: theta prior does not match the parameter layout");
    }

    const Eigen::VectorXd offsets = data.colwise().mean();
    Eigen::MatrixXd centered = data.rowwise() - offsets.transpose();

    ForwardModel model;
    model.n_samples = spec.n_volumes;
    model.n_regions = spec.n_regions;
    // The layout is computed once; rebuilding it per prediction would dominate
    // the finite-difference loop.
    model.predict = [&spec, &inputs, slots](const Eigen::VectorXd& theta) {
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
        Eigen::MatrixXd y = integrate(spec, p, inputs);
        y.rowwise() -= y.colwise().mean().eval();
        return y;
    };

    SubjectPosterior out = fit_model(model, centered, priors, opts);
    out.data_offsets = offsets;
    out.param_labels.reserve(slots.size());
    for (const auto& s : slots) out.param_labels.push_back(s.label);
    return out;
}

}  // namespace bdc
