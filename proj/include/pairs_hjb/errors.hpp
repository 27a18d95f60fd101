#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace pairs_hjb {

/// Raised for out-of-domain or malformed inputs. `field()` names the offending
/// parameter when one is known.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what, std::string field = {})
        : std::invalid_argument(what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Raised when a numerical invariant fails at runtime (fixed point not reached,
/// non-finite value in a lattice, singular regression).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a calibration cannot produce usable parameters.
class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw ValidationError(field + ": " + msg, field);
}

inline void require_finite(double v, const std::string& field) {
    if (!std::isfinite(v)) throw ValidationError(field + ": value must be finite", field);
}

}  // namespace detail
}  // namespace pairs_hjb
