#pragma once

#include <cstdint>
#include <string>

#include "seqvae/error.hpp"

namespace seqvae {

// KL-weight schedule beta(step) in [0,1]. Immutable after construction.
class AnnealSchedule {
public:
    enum class Kind { Constant, Linear, Cyclical };

    static AnnealSchedule constant(double beta0);
    // beta = min(1, step / warmup_steps)
    static AnnealSchedule linear(int64_t warmup_steps);
    // period = ceil(total_steps / cycles); tau = (step mod period) / period;
    // beta = min(1, tau / ramp_fraction)
    static AnnealSchedule cyclical(int cycles, int64_t total_steps, double ramp_fraction);

    double beta_at(int64_t step) const;

    Kind kind() const { return kind_; }
    double beta0() const { return beta0_; }
    int64_t warmup_steps() const { return warmup_steps_; }
    int cycles() const { return cycles_; }
    int64_t total_steps() const { return total_steps_; }
    double ramp_fraction() const { return ramp_fraction_; }
    std::string describe() const;

private:
    AnnealSchedule() = default;
    Kind kind_ = Kind::Constant;
    double beta0_ = 1.0;
    int64_t warmup_steps_ = 1;
    int cycles_ = 1;
    int64_t total_steps_ = 1;
    double ramp_fraction_ = 0.5;
};

double beta_at(const AnnealSchedule& schedule, int64_t step);

}  // namespace seqvae
