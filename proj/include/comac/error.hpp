#pragma once

#include <stdexcept>
#include <string>

namespace comac {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape, range, state).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Loss or parameters became non-finite during training or adaptation.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class InsufficientSupport : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

namespace detail {
inline void require(bool cond, const std::string& what) {
    if (!cond)
        throw ContractViolation(what);
}
}  // namespace detail

}  // namespace comac
