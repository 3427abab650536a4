#pragma once

#include <stdexcept>
#include <string>

namespace bdc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A covariance is singular (or otherwise invalid) beyond the jitter rescue.
struct DegenerateDensityError : Error {
    using Error::Error;
};

/// Mismatched vector/matrix dimensions between arguments.
struct DimensionError : Error {
    using Error::Error;
};

/// A forward integration produced a non-finite state.
struct DivergedModelError : Error {
    DivergedModelError(const std::string& what, long step)
        : Error(what), time_index(step) {}
    long time_index = -1;
};

/// The variational fit could not recover after maximum regularization.
struct FitFailure : Error {
    FitFailure(const std::string& what, double last_f, int iterations)
        : Error(what), last_free_energy(last_f), n_iterations(iterations) {}
    double last_free_energy = 0.0;
    int n_iterations = 0;
};

/// A prior reduction yields an indefinite posterior precision.
struct ReductionInvalidError : Error {
    using Error::Error;
};

}  // namespace bdc
