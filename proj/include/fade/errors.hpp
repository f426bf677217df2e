#pragma once

#include <stdexcept>
#include <string>

namespace fade {

// Error taxonomy used across the library. The CLI maps these onto exit codes.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Unknown concept/token id fed to the conditioning path.
struct VocabError : InputError {
    using InputError::InputError;
};

// Operation called in a state that does not admit it (backward before
// forward, double merge, ...).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

struct TrainingError : std::runtime_error {
    int step = -1;
    TrainingError(const std::string& msg, int step_index)
        : std::runtime_error(msg + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Probe accuracy gate failed; carries the per-head report in what().
struct GateFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fade
