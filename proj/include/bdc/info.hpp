#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <utility>
#include <vector>

#include "bdc/errors.hpp"

namespace bdc {

inline constexpr double kLn2Pi = 1.8378770664093454835606594728112;

/// Multivariate normal density: mean plus covariance. The one container used
/// for every prior and posterior in the pipeline (subject parameters, group
/// effects, noise hyperparameters).
template <typename Scalar>
struct GaussianDensityT {
    Eigen::Vector<Scalar, Eigen::Dynamic> mean;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> covariance;

    GaussianDensityT() = default;
    GaussianDensityT(Eigen::Vector<Scalar, Eigen::Dynamic> m,
                     Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> c)
        : mean(std::move(m)), covariance(std::move(c)) {}

    Eigen::Index dim() const { return mean.size(); }
};

using GaussianDensity = GaussianDensityT<double>;

/// Discrete posterior over a set of candidate models.
struct CategoricalPosterior {
    Eigen::VectorXd probabilities;

    Eigen::Index size() const { return probabilities.size(); }
};

/// Checks symmetry (1e-10 relative), positive semi-definiteness (smallest
/// eigenvalue >= -1e-10 * largest) and mean/covariance dimension agreement.
template <typename Scalar>
void validate(const GaussianDensityT<Scalar>& g) {
    if (g.mean.size() != g.covariance.rows() ||
        g.covariance.rows() != g.covariance.cols()) {
        throw DimensionError("gaussian density: mean length must equal covariance dimension");
    }
    if (g.dim() == 0) return;
    const Scalar scale = g.covariance.cwiseAbs().maxCoeff();
    if ((g.covariance - g.covariance.transpose()).cwiseAbs().maxCoeff() >
        Scalar(1e-10) * std::max(scale, Scalar(1))) {
        throw DegenerateDensityError("gaussian density: covariance not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>
        es(g.covariance, Eigen::EigenvaluesOnly);
    const Scalar lo = es.eigenvalues().minCoeff();
    const Scalar hi = es.eigenvalues().maxCoeff();
    if (lo < Scalar(-1e-10) * std::max(hi, Scalar(0))) {
        throw DegenerateDensityError("gaussian density: covariance not positive semi-definite");
    }
}

inline void validate(const CategoricalPosterior& p) {
    if (p.size() == 0) throw DimensionError("categorical posterior: no models");
    if ((p.probabilities.array() < -1e-12).any() ||
        (p.probabilities.array() > 1.0 + 1e-12).any()) {
        throw Error("categorical posterior: entries outside [0, 1]");
    }
    if (std::abs(p.probabilities.sum() - 1.0) > 1e-12) {
        throw Error("categorical posterior: probabilities must sum to 1");
    }
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
/// A single jitter of 1e-10 * trace/d is added if the factorization fails;
/// failing again raises DegenerateDensityError instead of returning +-inf.
template <typename Derived>
typename Derived::Scalar log_det_spd(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Mat a = m;
    Eigen::LLT<Mat> llt(a);
    if (llt.info() != Eigen::Success) {
        const Scalar jitter = Scalar(1e-10) * a.trace() / Scalar(a.rows());
        a += jitter * Mat::Identity(a.rows(), a.cols());
        llt.compute(a);
        if (llt.info() != Eigen::Success) {
            throw DegenerateDensityError("log_det_spd: matrix not positive definite after jitter");
        }
    }
    return Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Negative differential entropy -0.5 * ln|2*pi*e * Sigma|, in nats.
template <typename Scalar>
Scalar neg_entropy(const GaussianDensityT<Scalar>& g) {
    validate(g);
    if (g.dim() == 0) throw DimensionError("neg_entropy: empty density");
    const Scalar d = static_cast<Scalar>(g.dim());
    return Scalar(-0.5) * (d * (Scalar(kLn2Pi) + Scalar(1)) + log_det_spd(g.covariance));
}

/// KL divergence between multivariate normals, KL(q || p), in nats.
template <typename Scalar>
Scalar kl_gaussian(const GaussianDensityT<Scalar>& q, const GaussianDensityT<Scalar>& p) {
    validate(q);
    validate(p);
    if (q.dim() != p.dim()) throw DimensionError("kl_gaussian: dimension mismatch");
    const Eigen::Index d = q.dim();
    if (d == 0) throw DimensionError("kl_gaussian: empty densities");
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Mat pc = p.covariance;
    Eigen::LLT<Mat> llt(pc);
    if (llt.info() != Eigen::Success) {
        const Scalar jitter = Scalar(1e-10) * pc.trace() / Scalar(d);
        pc += jitter * Mat::Identity(d, d);
        llt.compute(pc);
        if (llt.info() != Eigen::Success) {
            throw DegenerateDensityError("kl_gaussian: p covariance singular");
        }
    }
    const Scalar log_det_p = Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Scalar log_det_q = log_det_spd(q.covariance);
    const Eigen::Vector<Scalar, Eigen::Dynamic> dm = p.mean - q.mean;
    const Scalar trace_term = llt.solve(q.covariance).trace();
    const Scalar quad_term = dm.dot(llt.solve(dm));
    return Scalar(0.5) * (trace_term + quad_term - Scalar(d) + log_det_p - log_det_q);
}

/// KL divergence from the uniform prior over k models to the posterior P:
/// sum_i P_i ln P_i + ln k, with 0 ln 0 := 0. Lives in [0, ln k].
inline double kl_categorical(const CategoricalPosterior& p) {
    validate(p);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double pi = p.probabilities[i];
        if (pi > 0.0) acc += pi * std::log(pi);
    }
    return acc + std::log(static_cast<double>(p.size()));
}

/// Log Bayes factor of model 1 over model 2 given their free energies.
inline double log_bayes_factor(double f1, double f2) { return f1 - f2; }

/// Posterior probability of one model over another from their log Bayes
/// factor (logistic function of the difference in nats).
inline double prob_from_nats(double delta) {
    return 1.0 / (1.0 + std::exp(-delta));
}

/// Softmax over log model evidences; invariant to adding a constant.
template <typename Derived>
CategoricalPosterior posterior_over_models(const Eigen::MatrixBase<Derived>& free_energies) {
    if (free_energies.size() == 0) {
        throw DimensionError("posterior_over_models: empty evidence vector");
    }
    Eigen::VectorXd f = free_energies.template cast<double>();
    if (!f.allFinite()) throw Error("posterior_over_models: non-finite free energy");
    const Eigen::VectorXd e = (f.array() - f.maxCoeff()).exp();
    return CategoricalPosterior{e / e.sum()};
}

/// Indices whose prior/posterior variance is nonzero.
template <typename Scalar>
std::vector<Eigen::Index> nonzero_variance_indices(const GaussianDensityT<Scalar>& g) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < g.dim(); ++i) {
        if (g.covariance(i, i) > Scalar(0)) idx.push_back(i);
    }
    return idx;
}

/// Marginal density over the given index set.
template <typename Scalar>
GaussianDensityT<Scalar> marginal(const GaussianDensityT<Scalar>& g,
                                  const std::vector<Eigen::Index>& idx) {
    GaussianDensityT<Scalar> out;
    out.mean.resize(static_cast<Eigen::Index>(idx.size()));
    out.covariance.resize(static_cast<Eigen::Index>(idx.size()),
                          static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.mean[static_cast<Eigen::Index>(i)] = g.mean[idx[i]];
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                g.covariance(idx[i], idx[j]);
        }
    }
    return out;
}

}  // namespace bdc
