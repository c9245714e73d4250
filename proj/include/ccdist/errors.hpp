#pragma once

#include <stdexcept>
#include <string>

namespace ccdist {

// Inputs that violate a documented precondition (bad dimension, out-of-range
// parameter, malformed value).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Evaluation lost all precision or produced a value that cannot be valid,
// e.g. a non-positive integral after catastrophic cancellation.
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ccdist
