#pragma once

#include <stdexcept>
#include <string>

namespace qkdsim {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Measured detector rate above the paralyzable maximum e^-1/tau.
class SaturationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Classical-channel message out of order, malformed, or inconsistent.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Too few sifted bits to estimate the QBER.
class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace qkdsim
