#pragma once

#include <stdexcept>
#include <string>

namespace seqvae {

// Shape or dimension mismatch between tensors. Messages name both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input outside an operation's numeric domain (log of a non-positive value,
// reduction over an empty axis, ...).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API contract violation: bad argument value or wrong call sequence.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace seqvae
