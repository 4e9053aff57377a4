#pragma once

#include <span>
#include <string>
#include <string_view>

#include "seqvae/tensor.hpp"

namespace seqvae {

// How the encoder's per-timestep hidden states become one feature vector.
enum class AggregationMethod { LastHidden, AvgPool, MaxPool, AbsPool };

// Configuration key values: last | avg | max | abs.
AggregationMethod aggregation_from_string(std::string_view s);
std::string_view to_string(AggregationMethod m);

// hidden: B x T x H, lengths[i] >= 1. Padded positions are excluded:
//   LastHidden  h at position lengths[i]-1
//   AvgPool     mean over valid positions (divides by the true length)
//   MaxPool     per-dimension max over valid positions
//   AbsPool     per-dimension value of largest |h|, sign preserved
// Ties take the earliest timestep. Gradients flow only to the selected or
// averaged positions.
Tensor aggregate(const Tensor& hidden, std::span<const int> lengths, AggregationMethod method);

}  // namespace seqvae
