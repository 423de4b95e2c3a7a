#pragma once

#include <stdexcept>
#include <string>

namespace manidiff {

// Base class for every typed error. `kind()` is the stable name the CLI
// prints to stderr before exiting nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

#define MANIDIFF_ERROR_TYPE(Name)                                            \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& msg) : Error(#Name, msg) {}         \
    };

MANIDIFF_ERROR_TYPE(DegenerateRotation)
MANIDIFF_ERROR_TYPE(InvalidRotationMatrix)
MANIDIFF_ERROR_TYPE(JointLimitViolation)
MANIDIFF_ERROR_TYPE(EmptyGeometry)
MANIDIFF_ERROR_TYPE(InvalidGeometry)
MANIDIFF_ERROR_TYPE(ShapeMismatch)
MANIDIFF_ERROR_TYPE(InvalidInput)
MANIDIFF_ERROR_TYPE(InvalidLength)
MANIDIFF_ERROR_TYPE(InvalidHandType)
MANIDIFF_ERROR_TYPE(InvalidConfig)
MANIDIFF_ERROR_TYPE(InvalidTimestep)
MANIDIFF_ERROR_TYPE(NumericalError)
MANIDIFF_ERROR_TYPE(ConfigError)
MANIDIFF_ERROR_TYPE(DependencyError)
MANIDIFF_ERROR_TYPE(FileNotFound)
MANIDIFF_ERROR_TYPE(InsufficientFrames)
MANIDIFF_ERROR_TYPE(InsufficientSamples)
MANIDIFF_ERROR_TYPE(ParseError)
MANIDIFF_ERROR_TYPE(AssemblyError)

#undef MANIDIFF_ERROR_TYPE

}  // namespace manidiff
