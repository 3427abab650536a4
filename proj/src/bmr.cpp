#include "bdc/bmr.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace bdc {

namespace {

std::vector<Eigen::Index> indices_where(const GaussianDensity& g, bool nonzero_variance) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < g.dim(); ++i) {
        const bool nz = g.covariance(i, i) > 0.0;
        if (nz == nonzero_variance) idx.push_back(i);
    }
    return idx;
}

Eigen::MatrixXd take(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                     const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m(rows[i], cols[j]);
        }
    }
    return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
    Eigen::VectorXd out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
    return out;
}

Eigen::MatrixXd spd_inverse_or_throw(const Eigen::MatrixXd& m, const char* what) {
    Eigen::MatrixXd a = m;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) {
        a += (1e-10 * a.trace() / static_cast<double>(a.rows())) *
             Eigen::MatrixXd::Identity(a.rows(), a.cols());
        llt.compute(a);
        if (llt.info() != Eigen::Success) {
            throw DegenerateDensityError(std::string(what) + ": not positive definite");
        }
    }
    return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

}  // namespace

ReduceResult reduce(const GaussianDensity& full_prior, const GaussianDensity& full_posterior,
                    const GaussianDensity& reduced_prior) {
    const Eigen::Index d = full_prior.dim();
    if (full_posterior.dim() != d || reduced_prior.dim() != d) {
        throw DimensionError("reduce: prior/posterior dimensions must match");
    }

    // Dimensions pinned in the full model stay pinned; they carry no evidence.
    const std::vector<Eigen::Index> active = indices_where(full_prior, true);
    for (Eigen::Index i = 0; i < d; ++i) {
        if (full_prior.covariance(i, i) == 0.0 && reduced_prior.covariance(i, i) != 0.0) {
            throw ReductionInvalidError("reduce: cannot relax a zero-variance prior");
        }
    }

    // Partition the active dimensions into kept (free) and switched-off ones.
    std::vector<Eigen::Index> free_idx, off_idx;
    for (Eigen::Index i : active) {
        if (reduced_prior.covariance(i, i) > 0.0) {
            free_idx.push_back(i);
        } else {
            off_idx.push_back(i);
        }
    }

    const Eigen::MatrixXd sig0 = take(full_prior.covariance, active, active);
    const Eigen::MatrixXd sig = take(full_posterior.covariance, active, active);
    const Eigen::VectorXd nu0 = take(full_prior.mean, active);
    const Eigen::VectorXd mu = take(full_posterior.mean, active);

    const Eigen::MatrixXd p0 = spd_inverse_or_throw(sig0, "reduce: full prior");
    const Eigen::MatrixXd p = spd_inverse_or_throw(sig, "reduce: full posterior");
    const double logdet_p0 = -log_det_spd(sig0);
    const double logdet_p = -log_det_spd(sig);

    // Positions of the kept/off sets inside `active`.
    std::vector<Eigen::Index> fpos, kpos;
    for (std::size_t i = 0; i < active.size(); ++i) {
        if (reduced_prior.covariance(active[i], active[i]) > 0.0) {
            fpos.push_back(static_cast<Eigen::Index>(i));
        } else {
            kpos.push_back(static_cast<Eigen::Index>(i));
        }
    }

    const Eigen::VectorXd b = p * mu - p0 * nu0;
    const Eigen::MatrixXd diff = p - p0;

    double delta_f;
    Eigen::VectorXd mean_f;
    Eigen::MatrixXd cov_f;
    if (fpos.empty()) {
        // Everything switched off: the reduced model is a point mass at rho.
        const Eigen::VectorXd rho_k = take(reduced_prior.mean, off_idx);
        const Eigen::VectorXd bk = take(b, kpos);
        const Eigen::MatrixXd dkk = take(diff, kpos, kpos);
        delta_f = 0.5 * (logdet_p - logdet_p0) -
                  0.5 * (mu.dot(p * mu) - nu0.dot(p0 * nu0) + rho_k.dot(dkk * rho_k) -
                         2.0 * rho_k.dot(bk));
        mean_f.resize(0);
        cov_f.resize(0, 0);
    } else {
        Eigen::MatrixXd sig_r_ff(fpos.size(), fpos.size());
        for (std::size_t i = 0; i < fpos.size(); ++i) {
            for (std::size_t j = 0; j < fpos.size(); ++j) {
                sig_r_ff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    reduced_prior.covariance(free_idx[i], free_idx[j]);
            }
        }
        const Eigen::MatrixXd r_ff = spd_inverse_or_throw(sig_r_ff, "reduce: reduced prior");
        const double logdet_r = -log_det_spd(sig_r_ff);
        const Eigen::VectorXd rho_f = take(reduced_prior.mean, free_idx);
        const Eigen::VectorXd rho_k = take(reduced_prior.mean, off_idx);

        const Eigen::MatrixXd m_ff = take(diff, fpos, fpos) + r_ff;
        Eigen::LLT<Eigen::MatrixXd> llt(m_ff);
        if (llt.info() != Eigen::Success) {
            throw ReductionInvalidError("reduce: reduced posterior precision indefinite");
        }
        const double logdet_m =
            2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

        const Eigen::MatrixXd d_fk = take(diff, fpos, kpos);
        const Eigen::MatrixXd d_kk = take(diff, kpos, kpos);
        const Eigen::VectorXd b_f = take(b, fpos) - d_fk * rho_k + r_ff * rho_f;
        const Eigen::VectorXd x_f = llt.solve(b_f);

        delta_f = 0.5 * (logdet_p - logdet_p0 + logdet_r - logdet_m) -
                  0.5 * (mu.dot(p * mu) - nu0.dot(p0 * nu0) + rho_f.dot(r_ff * rho_f) +
                         rho_k.dot(d_kk * rho_k) - 2.0 * rho_k.dot(take(b, kpos)) -
                         x_f.dot(m_ff * x_f));
        mean_f = x_f;
        cov_f = llt.solve(Eigen::MatrixXd::Identity(m_ff.rows(), m_ff.cols()));
    }

    ReduceResult out;
    out.delta_f = delta_f;
    out.posterior.mean = full_prior.mean;  // pinned dims sit at their prior mean
    out.posterior.covariance =
        Eigen::MatrixXd::Zero(full_prior.dim(), full_prior.dim());
    for (std::size_t i = 0; i < off_idx.size(); ++i) {
        out.posterior.mean[off_idx[i]] = reduced_prior.mean[off_idx[i]];
    }
    for (std::size_t i = 0; i < free_idx.size(); ++i) {
        out.posterior.mean[free_idx[i]] = mean_f[static_cast<Eigen::Index>(i)];
        for (std::size_t j = 0; j < free_idx.size(); ++j) {
            out.posterior.covariance(free_idx[i], free_idx[j]) =
                cov_f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    if (!std::isfinite(out.delta_f)) {
        throw ReductionInvalidError("reduce: non-finite evidence change");
    }
    return out;
}

namespace {

GaussianDensity switch_off(const GaussianDensity& prior, const std::vector<int>& off) {
    GaussianDensity out = prior;
    for (int k : off) {
        out.mean[k] = 0.0;
        out.covariance.row(k).setZero();
        out.covariance.col(k).setZero();
    }
    return out;
}

/// KL(q || p) over the dimensions where p has nonzero variance.
double kl_over_free(const GaussianDensity& q, const GaussianDensity& p) {
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < p.dim(); ++i) {
        if (p.covariance(i, i) > 0.0) free_idx.push_back(i);
    }
    if (free_idx.empty()) return 0.0;
    GaussianDensity qf{take(q.mean, free_idx), take(q.covariance, free_idx, free_idx)};
    GaussianDensity pf{take(p.mean, free_idx), take(p.covariance, free_idx, free_idx)};
    return kl_gaussian(qf, pf);
}

}  // namespace

PebModel prune_greedy(const PebModel& peb) {
    PebModel out = peb;
    double total = 0.0;
    while (true) {
        std::vector<int> candidates;
        for (Eigen::Index i = 0; i < out.beta_prior.dim(); ++i) {
            if (out.beta_prior.covariance(i, i) > 0.0) candidates.push_back(static_cast<int>(i));
        }
        if (candidates.empty()) break;

        double best_df = 0.0;
        int best_k = -1;
        GaussianDensity best_prior;
        ReduceResult best_result;
        for (int k : candidates) {
            GaussianDensity cand = switch_off(out.beta_prior, {k});
            double df = -std::numeric_limits<double>::infinity();
            ReduceResult res;
            try {
                res = reduce(out.beta_prior, out.beta_post, cand);
                df = res.delta_f;
            } catch (const ReductionInvalidError&) {
                continue;
            }
            if (best_k < 0 ? df > 0.0 : df > best_df + 1e-6) {
                best_df = df;
                best_k = k;
                best_prior = std::move(cand);
                best_result = std::move(res);
            }
        }
        if (best_k < 0) break;
        out.beta_prior = best_prior;
        out.beta_post = best_result.posterior;
        total += best_df;
    }
    out.free_energy += total;
    const double gamma_kl = std::max(0.0, peb.complexity - kl_over_free(peb.beta_post, peb.beta_prior));
    out.complexity = kl_over_free(out.beta_post, out.beta_prior) + gamma_kl;
    out.accuracy = out.free_energy + out.complexity;
    return out;
}

EmpiricalBayesResult empirical_bayes_update(const SubjectPosterior& subject,
                                            const PriorSpec& priors,
                                            const std::vector<Eigen::Index>& subset_indices,
                                            const PebModel& pruned_group) {
    const Eigen::Index m = pruned_group.beta_post.dim();
    if (static_cast<Eigen::Index>(subset_indices.size()) != m) {
        throw DimensionError("empirical_bayes_update: subset/group dimension mismatch");
    }
    for (Eigen::Index idx : subset_indices) {
        if (idx < 0 || idx >= subject.theta_post.dim()) {
            throw DimensionError("empirical_bayes_update: subset index out of range");
        }
    }

    GaussianDensity reduced = priors.theta_prior;
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::Index idx = subset_indices[static_cast<std::size_t>(j)];
        reduced.mean[idx] = 0.0;
        reduced.covariance.row(idx).setZero();
        reduced.covariance.col(idx).setZero();
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        if (pruned_group.beta_prior.covariance(j, j) == 0.0) continue;  // pruned: stays off
        const Eigen::Index idx = subset_indices[static_cast<std::size_t>(j)];
        reduced.mean[idx] = pruned_group.beta_post.mean[j];
        for (Eigen::Index j2 = 0; j2 < m; ++j2) {
            if (pruned_group.beta_prior.covariance(j2, j2) == 0.0) continue;
            const Eigen::Index idx2 = subset_indices[static_cast<std::size_t>(j2)];
            reduced.covariance(idx, idx2) = pruned_group.beta_post.covariance(j, j2);
        }
    }

    const ReduceResult res = reduce(priors.theta_prior, subject.theta_post, reduced);

    EmpiricalBayesResult out;
    out.subject = subject;
    out.subject.theta_post = res.posterior;
    out.subject.free_energy = subject.free_energy + res.delta_f;
    out.priors = priors;
    out.priors.theta_prior = reduced;

    // Keep free_energy = accuracy - complexity consistent under the new priors.
    // The lambda part of the complexity is untouched by the reduction.
    const double lambda_kl =
        std::max(0.0, subject.complexity - kl_over_free(subject.theta_post, priors.theta_prior));
    out.subject.complexity = kl_over_free(res.posterior, reduced) + lambda_kl;
    out.subject.accuracy = out.subject.free_energy + out.subject.complexity;
    return out;
}

std::vector<ReducedModel> build_model_space(const PebModel& pruned, double threshold, int cap) {
    std::vector<int> free_dims;
    for (Eigen::Index i = 0; i < pruned.beta_prior.dim(); ++i) {
        if (pruned.beta_prior.covariance(i, i) > 0.0) free_dims.push_back(static_cast<int>(i));
    }

    auto label_of = [&](int k) {
        return pruned.param_labels.empty() ? std::to_string(k)
                                           : pruned.param_labels[static_cast<std::size_t>(k)];
    };

    std::vector<ReducedModel> space;
    ReducedModel start;
    start.reduced_prior = pruned.beta_prior;
    start.reduced_posterior = pruned.beta_post;
    start.delta_f = 0.0;
    space.push_back(start);

    std::set<std::vector<int>> visited;
    visited.insert({});
    std::vector<std::vector<int>> queue{{}};
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::vector<int> base = queue[head];
        for (int k : free_dims) {
            if (static_cast<int>(space.size()) >= cap) return space;
            if (std::find(base.begin(), base.end(), k) != base.end()) continue;
            std::vector<int> next = base;
            next.insert(std::lower_bound(next.begin(), next.end(), k), k);
            if (!visited.insert(next).second) continue;

            GaussianDensity cand = switch_off(pruned.beta_prior, next);
            ReducedModel model;
            try {
                const ReduceResult res = reduce(pruned.beta_prior, pruned.beta_post, cand);
                model.delta_f = res.delta_f;
                model.reduced_posterior = res.posterior;
            } catch (const ReductionInvalidError&) {
                continue;
            }
            if (model.delta_f <= -threshold) continue;
            model.reduced_prior = std::move(cand);
            model.switched_off_idx = next;
            for (int idx : next) model.switched_off.push_back(label_of(idx));
            space.push_back(std::move(model));
            queue.push_back(next);
        }
    }
    return space;
}

}  // namespace bdc
