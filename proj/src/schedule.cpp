#include "seqvae/schedule.hpp"

#include <algorithm>

namespace seqvae {

AnnealSchedule AnnealSchedule::constant(double beta0) {
    if (beta0 < 0.0 || beta0 > 1.0) {
        throw ContractError("AnnealSchedule: constant beta " + std::to_string(beta0) + " outside [0,1]");
    }
    AnnealSchedule s;
    s.kind_ = Kind::Constant;
    s.beta0_ = beta0;
    return s;
}

AnnealSchedule AnnealSchedule::linear(int64_t warmup_steps) {
    if (warmup_steps < 1) throw ContractError("AnnealSchedule: warmup_steps must be >= 1");
    AnnealSchedule s;
    s.kind_ = Kind::Linear;
    s.warmup_steps_ = warmup_steps;
    return s;
}

AnnealSchedule AnnealSchedule::cyclical(int cycles, int64_t total_steps, double ramp_fraction) {
    if (cycles < 1) throw ContractError("AnnealSchedule: cycles must be >= 1");
    if (total_steps < 1) throw ContractError("AnnealSchedule: total_steps must be >= 1");
    if (!(ramp_fraction > 0.0) || ramp_fraction > 1.0) {
        throw ContractError("AnnealSchedule: ramp_fraction must be in (0,1]");
    }
    AnnealSchedule s;
    s.kind_ = Kind::Cyclical;
    s.cycles_ = cycles;
    s.total_steps_ = total_steps;
    s.ramp_fraction_ = ramp_fraction;
    return s;
}

double AnnealSchedule::beta_at(int64_t step) const {
    if (step < 0) throw ContractError("beta_at: negative step");
    switch (kind_) {
        case Kind::Constant:
            return beta0_;
        case Kind::Linear:
            return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps_));
        case Kind::Cyclical: {
            int64_t period = (total_steps_ + cycles_ - 1) / cycles_;
            double tau = static_cast<double>(step % period) / static_cast<double>(period);
            return std::min(1.0, tau / ramp_fraction_);
        }
    }
    throw ContractError("beta_at: unknown schedule kind");
}

std::string AnnealSchedule::describe() const {
    switch (kind_) {
        case Kind::Constant:
            return "constant(" + std::to_string(beta0_) + ")";
        case Kind::Linear:
            return "linear(warmup=" + std::to_string(warmup_steps_) + ")";
        case Kind::Cyclical:
            return "cyclical(M=" + std::to_string(cycles_) + ",T=" + std::to_string(total_steps_) +
                   ",R=" + std::to_string(ramp_fraction_) + ")";
    }
    return "?";
}

double beta_at(const AnnealSchedule& schedule, int64_t step) { return schedule.beta_at(step); }

}  // namespace seqvae
