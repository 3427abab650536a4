#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "bdc/errors.hpp"

namespace bdc {

/// Constants of the extended balloon observation model. Defaults are the
/// standard empirical values; region-specific log-scalings in DcmParams
/// multiply tau0, kappa0 and the intra/extravascular ratio.
struct BalloonConstants {
    double kappa0 = 0.64;  // vasodilatory signal decay rate, 1/s
    double gamma = 0.32;   // flow-dependent elimination rate, 1/s
    double tau0 = 2.0;     // venous transit time, s
    double alpha = 0.32;   // vessel stiffness exponent
    double e0 = 0.4;       // resting oxygen extraction fraction
    double v0 = 4.0;       // resting venous volume, percent
    double te = 0.04;      // echo time, s
    double nu0 = 40.3;     // frequency offset of deoxygenated vessels, 1/s
    double r0 = 25.0;      // intravascular relaxation slope, 1/s
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Network structure of one model: which coupling parameters exist, the
/// acquisition geometry, and the observation constants.
struct DcmSpec {
    int n_regions = 0;
    int n_inputs = 0;
    BoolMatrix a_mask;                 // n_regions x n_regions; diagonal always on
    std::vector<BoolMatrix> b_masks;   // one n_regions x n_regions mask per input
    BoolMatrix c_mask;                 // n_regions x n_inputs
    double tr = 0.0;                   // repetition time, s
    int n_volumes = 0;
    std::vector<std::string> region_names;
    std::vector<std::string> input_names;
    BalloonConstants balloon;
};

void validate(const DcmSpec& spec);

/// Parameters of one subject's model. Entries outside the enabled masks are
/// exactly zero. Self-connections are carried as log-scalings (a_self, b
/// diagonals) of the fixed -0.5 Hz prior self-connection.
struct DcmParams {
    Eigen::MatrixXd a;                 // off-diagonal coupling, Hz
    Eigen::VectorXd a_self;            // self-connection log-scaling, unitless
    std::vector<Eigen::MatrixXd> b;    // per input: diag log-scalings + enabled off-diagonals
    Eigen::MatrixXd c;                 // driving strength, Hz per unit input
    Eigen::VectorXd transit;           // log-scaling of tau per region
    Eigen::VectorXd decay;             // log-scaling of kappa per region
    Eigen::VectorXd epsilon;           // log intra/extravascular ratio per region
    Eigen::VectorXd log_precision;     // lambda per region (used by the fit layer)
};

/// All-zero parameter set shaped for `spec` (the prior expectation).
DcmParams zero_params(const DcmSpec& spec);

void validate(const DcmSpec& spec, const DcmParams& params);

/// Experimental input timeseries on a uniform microtime grid.
struct InputSchedule {
    double dt = 0.0;       // microtime step, s
    Eigen::MatrixXd u;     // n_inputs x n_timesteps, boxcar values

    double duration() const { return dt * static_cast<double>(u.cols()); }
};

/// One boxcar block on one input channel.
struct InputBlock {
    int input_index = 0;
    double onset = 0.0;     // s
    double duration = 0.0;  // s
};

/// Haemodynamic state of every region, in natural units. The resting fixed
/// point is s=0, f=v=q=1.
struct HaemodynamicState {
    Eigen::VectorXd s;  // vasodilatory signal
    Eigen::VectorXd f;  // normalized inflow
    Eigen::VectorXd v;  // normalized venous volume
    Eigen::VectorXd q;  // normalized deoxyhemoglobin content

    static HaemodynamicState rest(int n_regions);
};

/// dz/dt of the bilinear neural model: (A + sum_j u_j B_j) z + C u, with
/// self-connections -0.5 * exp(a_self_i + sum_j u_j b_j_ii).
Eigen::VectorXd neural_derivative(const Eigen::VectorXd& z, const Eigen::VectorXd& u,
                                  const DcmParams& params, const DcmSpec& spec);

/// Time derivative of the balloon states in natural units, given the current
/// neural activity.
HaemodynamicState haemo_derivative(const HaemodynamicState& state, const Eigen::VectorXd& z,
                                   const DcmParams& params, const DcmSpec& spec);

/// BOLD signal (percent change from rest) for the given haemodynamic state.
Eigen::VectorXd bold_observation(const HaemodynamicState& state, const DcmParams& params,
                                 const DcmSpec& spec);

struct IntegrateOptions {
    /// Microsteps per volume; 0 chooses the smallest even count giving a step
    /// of at most min(tr/16, 0.1 s).
    int steps_per_volume = 0;
};

int default_steps_per_volume(double tr);

/// Deterministic noiseless BOLD timeseries, one row per volume sampled at the
/// volume midpoint, one column per region. Throws DivergedModelError with the
/// offending step index if the state leaves the finite range.
Eigen::MatrixXd integrate(const DcmSpec& spec, const DcmParams& params,
                          const InputSchedule& inputs, const IntegrateOptions& opts = {});

/// integrate() plus seeded i.i.d. Gaussian observation noise per region.
/// Identical seeds give bit-identical output.
Eigen::MatrixXd simulate(const DcmSpec& spec, const DcmParams& params,
                         const InputSchedule& inputs, const Eigen::VectorXd& noise_sd,
                         std::uint64_t seed, const IntegrateOptions& opts = {});

/// Boxcar schedule from block onsets/durations; overlapping blocks on one
/// input saturate at 1.
InputSchedule build_inputs(const std::vector<InputBlock>& blocks, double dt,
                           double total_duration, int n_inputs);

/// --- Parameter vector layout -------------------------------------------
/// The fit and group layers work on a flat vector of the mask-enabled
/// parameters. The layout fixes the ordering and the labels.

enum class ParamKind { AOff, ASelf, BDiag, BOff, C, Transit, Decay, Epsilon };

struct ParamSlot {
    ParamKind kind;
    int region = -1;  // target region (row)
    int source = -1;  // source region (column), for couplings
    int input = -1;   // input index, for B and C entries
    std::string label;
};

/// Enabled parameter slots in canonical order: A off-diagonal (row-major),
/// A self log-scalings, B entries per input (diagonal first, then enabled
/// off-diagonals), C entries, then transit/decay/epsilon per region.
std::vector<ParamSlot> param_layout(const DcmSpec& spec);

Eigen::VectorXd pack_params(const DcmSpec& spec, const DcmParams& params);
DcmParams unpack_params(const DcmSpec& spec, const Eigen::VectorXd& theta);

}  // namespace bdc
