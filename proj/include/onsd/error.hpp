#pragma once

#include <stdexcept>
#include <string>

namespace onsd {

/// Coarse failure classes; the CLI maps them onto exit codes 2 / 3 / 1.
enum class ErrorKind {
    invalid_input,   // malformed or inconsistent input data
    empty_pipeline,  // nothing left to score / measure
    internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    explicit Error(const std::string& what) : Error(ErrorKind::invalid_input, what) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace onsd
