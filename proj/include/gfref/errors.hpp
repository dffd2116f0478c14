#pragma once

#include <stdexcept>
#include <string>

namespace gfref {

// Input/shape violations: bad arguments, malformed files, inconsistent dimensions.
struct validation_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerical failures: singular/ill-conditioned systems, non-convergence, sampler breakdown.
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gfref
