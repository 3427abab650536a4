#include "bdc/peb.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace bdc {

Eigen::MatrixXd build_design(int n_subjects, int n_params) {
    if (n_subjects < 1 || n_params < 1) {
        throw DimensionError("build_design: subject and parameter counts must be >= 1");
    }
    return Eigen::MatrixXd::Identity(n_params, n_params).replicate(n_subjects, 1);
}

Eigen::MatrixXd precision_matrix(double gamma, const Eigen::MatrixXd& q0,
                                 const Eigen::MatrixXd& q1, int n_subjects) {
    if (q0.rows() != q0.cols() || q1.rows() != q1.cols() || q0.rows() != q1.rows()) {
        throw DimensionError("precision_matrix: Q0 and Q1 must be square and equal-sized");
    }
    if (n_subjects < 1) throw DimensionError("precision_matrix: need at least one subject");
    const Eigen::Index m = q0.rows();
    auto check_sym_psd = [](const Eigen::MatrixXd& q, const char* name) {
        const double scale = std::max(q.cwiseAbs().maxCoeff(), 1.0);
        if ((q - q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw Error(std::string("precision_matrix: ") + name + " not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-10 * std::max(es.eigenvalues().maxCoeff(), 0.0)) {
            throw Error(std::string("precision_matrix: ") + name + " not positive semi-definite");
        }
    };
    check_sym_psd(q0, "Q0");
    check_sym_psd(q1, "Q1");
    const Eigen::MatrixXd block = q0 + std::exp(-gamma) * q1;
    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(n_subjects * m, n_subjects * m);
    for (int i = 0; i < n_subjects; ++i) {
        pi.block(i * m, i * m, m, m) = block;
    }
    return pi;
}

namespace {

struct SubjectTerms {
    Eigen::MatrixXd lambda;  // P_i - P0: the data information about theta_i
    Eigen::VectorXd b;       // P_i m_i - P0 mu0
    double kappa = 0.0;      // normalization of the likelihood kernel q_i / p0
};

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const char* what) {
    Eigen::MatrixXd a = m;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) {
        a += (1e-10 * a.trace() / static_cast<double>(a.rows())) *
             Eigen::MatrixXd::Identity(a.rows(), a.cols());
        llt.compute(a);
        if (llt.info() != Eigen::Success) {
            throw DegenerateDensityError(std::string(what) + ": matrix not positive definite");
        }
    }
    return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

class PebProblem {
public:
    PebProblem(const std::vector<GaussianDensity>& subjects,
               const GaussianDensity& prior, const PebConfig& cfg)
        : m_(prior.dim()), n_(static_cast<int>(subjects.size())) {
        p0_ = spd_inverse(prior.covariance, "fit_peb: first-level prior");
        const double logdet_p0 = -log_det_spd(prior.covariance);
        terms_.reserve(subjects.size());
        for (const GaussianDensity& s : subjects) {
            SubjectTerms t;
            const Eigen::MatrixXd pi = spd_inverse(s.covariance, "fit_peb: subject covariance");
            t.lambda = pi - p0_;
            t.b = pi * s.mean - p0_ * prior.mean;
            t.kappa = 0.5 * (-log_det_spd(s.covariance) - logdet_p0) -
                      0.5 * (s.mean.dot(pi * s.mean) - prior.mean.dot(p0_ * prior.mean));
            terms_.push_back(std::move(t));
        }
        q0_ = cfg.q0_scale * Eigen::MatrixXd::Identity(m_, m_);
        if (cfg.q1_diag.size() > 0) {
            if (cfg.q1_diag.size() != m_) {
                throw DimensionError("fit_peb: q1_diag length mismatch");
            }
            q1_ = cfg.q1_diag.asDiagonal();
        } else {
            q1_ = p0_.diagonal().asDiagonal();
        }
    }

    Eigen::MatrixXd between_precision(double gamma) const {
        return q0_ + std::exp(-gamma) * q1_;
    }

    /// Log marginal likelihood of (beta, gamma) with theta integrated out,
    /// plus the -0.5 tr(Sigma_beta A) correction for uncertainty in beta.
    double expected_l(double gamma, const Eigen::VectorXd& beta_mean,
                      const Eigen::MatrixXd& beta_cov) const {
        const Eigen::MatrixXd pb = between_precision(gamma);
        const double logdet_pb = log_det_spd(pb);
        double acc = 0.0;
        for (const SubjectTerms& t : terms_) {
            const Eigen::MatrixXd g = t.lambda + pb;
            Eigen::LLT<Eigen::MatrixXd> llt(g);
            if (llt.info() != Eigen::Success) {
                throw DegenerateDensityError(
                    "fit_peb: subject data precision plus between-subject precision "
                    "not positive definite");
            }
            const double logdet_g =
                2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
            const Eigen::VectorXd c = t.b + pb * beta_mean;
            const Eigen::MatrixXd g_inv_pb = llt.solve(pb);
            const Eigen::MatrixXd a_i = pb - pb * g_inv_pb;  // per-subject info about beta
            acc += t.kappa + 0.5 * logdet_pb - 0.5 * logdet_g -
                   0.5 * beta_mean.dot(pb * beta_mean) + 0.5 * c.dot(llt.solve(c)) -
                   0.5 * (beta_cov * a_i).trace();
        }
        return acc;
    }

    /// Exact conditional posterior of beta for fixed gamma.
    void beta_update(double gamma, const GaussianDensity& beta_prior,
                     Eigen::VectorXd& mean, Eigen::MatrixXd& cov) const {
        const Eigen::MatrixXd pb = between_precision(gamma);
        Eigen::MatrixXd info = spd_inverse(beta_prior.covariance, "fit_peb: beta prior");
        Eigen::VectorXd h = info * beta_prior.mean;
        for (const SubjectTerms& t : terms_) {
            const Eigen::MatrixXd g = t.lambda + pb;
            Eigen::LLT<Eigen::MatrixXd> llt(g);
            if (llt.info() != Eigen::Success) {
                throw DegenerateDensityError(
                    "fit_peb: subject data precision plus between-subject precision "
                    "not positive definite");
            }
            const Eigen::MatrixXd g_inv_pb = llt.solve(pb);
            info.noalias() += pb - pb * g_inv_pb;
            h.noalias() += pb * llt.solve(t.b);
        }
        cov = spd_inverse(info, "fit_peb: beta posterior precision");
        mean = cov * h;
    }

    Eigen::Index dim() const { return m_; }
    int n_subjects() const { return n_; }
    const Eigen::MatrixXd& q0() const { return q0_; }
    const Eigen::MatrixXd& q1() const { return q1_; }

private:
    Eigen::Index m_;
    int n_;
    Eigen::MatrixXd p0_;
    Eigen::MatrixXd q0_, q1_;
    std::vector<SubjectTerms> terms_;
};

}  // namespace

PebModel fit_peb(const std::vector<GaussianDensity>& subject_posteriors,
                 const GaussianDensity& first_level_prior,
                 const std::vector<std::string>& param_labels,
                 const PebConfig& cfg) {
    if (subject_posteriors.empty()) throw DimensionError("fit_peb: no subjects");
    const Eigen::Index m = first_level_prior.dim();
    if (m == 0) throw DimensionError("fit_peb: empty parameter subset");
    validate(first_level_prior);
    for (const GaussianDensity& s : subject_posteriors) {
        validate(s);
        if (s.dim() != m) {
            throw DimensionError("fit_peb: subjects must share one parameter subset");
        }
    }
    if (!param_labels.empty() && static_cast<Eigen::Index>(param_labels.size()) != m) {
        throw DimensionError("fit_peb: parameter label count mismatch");
    }

    PebModel out;
    out.n_subjects = static_cast<int>(subject_posteriors.size());
    out.param_labels = param_labels;
    out.design = build_design(out.n_subjects, static_cast<int>(m));
    out.first_level_prior = first_level_prior;
    out.subjects = subject_posteriors;
    out.beta_prior = cfg.beta_prior.dim() > 0 ? cfg.beta_prior : first_level_prior;
    if (out.beta_prior.dim() != m) {
        throw DimensionError("fit_peb: beta prior dimension mismatch");
    }
    out.gamma_prior = GaussianDensity{
        Eigen::VectorXd::Constant(1, cfg.gamma_prior_mean),
        Eigen::MatrixXd::Constant(1, 1, cfg.gamma_prior_var)};

    PebProblem prob(subject_posteriors, first_level_prior, cfg);
    out.q0 = prob.q0();
    out.q1 = prob.q1();

    const bool gamma_fixed = cfg.gamma_prior_var <= 0.0;
    double gamma = cfg.gamma_prior_mean;
    double gamma_var = gamma_fixed ? 0.0 : cfg.gamma_prior_var;

    Eigen::VectorXd beta_mean = out.beta_prior.mean;
    Eigen::MatrixXd beta_cov = out.beta_prior.covariance;

    const double fd = 1e-4;
    auto gamma_objective = [&](double g) {
        double val = prob.expected_l(g, beta_mean, beta_cov);
        if (!gamma_fixed) {
            val += -0.5 * (g - cfg.gamma_prior_mean) * (g - cfg.gamma_prior_mean) /
                   cfg.gamma_prior_var;
        }
        return val;
    };

    double f_prev = -std::numeric_limits<double>::infinity();
    double f = 0.0, acc = 0.0, comp = 0.0;
    int iter = 0;
    for (iter = 1; iter <= cfg.max_iterations; ++iter) {
        prob.beta_update(gamma, out.beta_prior, beta_mean, beta_cov);

        if (!gamma_fixed) {
            for (int k = 0; k < 8; ++k) {
                const double f0 = gamma_objective(gamma);
                const double fp = gamma_objective(gamma + fd);
                const double fm = gamma_objective(gamma - fd);
                const double d1 = (fp - fm) / (2.0 * fd);
                const double d2 = (fp - 2.0 * f0 + fm) / (fd * fd);
                double step = d2 < -1e-12 ? -d1 / d2 : d1;  // fall back to gradient
                step = std::clamp(step, -4.0, 4.0);
                gamma += step;
                if (std::abs(step) < 1e-8) break;
            }
            const double fp = gamma_objective(gamma + fd);
            const double fm = gamma_objective(gamma - fd);
            const double f0 = gamma_objective(gamma);
            const double d2 = (fp - 2.0 * f0 + fm) / (fd * fd);
            gamma_var = d2 < -1e-12 ? -1.0 / d2 : cfg.gamma_prior_var;
        }

        // Free energy: expected log marginal minus the KL complexity, with a
        // second-order correction for the gamma uncertainty.
        const double el = prob.expected_l(gamma, beta_mean, beta_cov);
        double lgg = 0.0;
        if (!gamma_fixed) {
            const double ep = prob.expected_l(gamma + fd, beta_mean, beta_cov);
            const double em = prob.expected_l(gamma - fd, beta_mean, beta_cov);
            lgg = (ep - 2.0 * el + em) / (fd * fd);
        }
        acc = el + 0.5 * gamma_var * lgg;
        comp = kl_gaussian(GaussianDensity{beta_mean, beta_cov}, out.beta_prior);
        if (!gamma_fixed) {
            comp += kl_gaussian(
                GaussianDensity{Eigen::VectorXd::Constant(1, gamma),
                                Eigen::MatrixXd::Constant(1, 1, gamma_var)},
                out.gamma_prior);
        }
        f = acc - comp;
        if (std::abs(f - f_prev) < cfg.f_tolerance) {
            out.converged = true;
            break;
        }
        f_prev = f;
    }

    out.beta_post = GaussianDensity{beta_mean, beta_cov};
    out.gamma_post = GaussianDensity{Eigen::VectorXd::Constant(1, gamma),
                                     Eigen::MatrixXd::Constant(1, 1, gamma_var)};
    out.free_energy = f;
    out.accuracy = acc;
    out.complexity = comp;
    out.n_iterations = std::min(iter, cfg.max_iterations);
    if (!std::isfinite(f)) throw Error("fit_peb: non-finite free energy");
    return out;
}

}  // namespace bdc
