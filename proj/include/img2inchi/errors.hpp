#pragma once

#include <stdexcept>
#include <string>

namespace img2inchi {

// Error taxonomy. The CLI maps UsageError/IoError/ConfigError to exit code 2
// and everything else (contract and invariant violations) to exit code 1.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreement; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid model/run configuration (odd D, H not dividing D, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Violated operation precondition (non-scalar loss, fully masked row, ...).
struct ContractError : Error {
    using Error::Error;
};

// Broken internal invariant (desynchronized cache, NaN in forward, ...).
struct InvariantError : Error {
    using Error::Error;
};

// File system / parsing problems.
struct IoError : Error {
    using Error::Error;
};

// Token not present in the vocabulary; message names token and byte offset.
struct VocabError : Error {
    using Error::Error;
};

// Command line misuse.
struct UsageError : Error {
    using Error::Error;
};

}  // namespace img2inchi
