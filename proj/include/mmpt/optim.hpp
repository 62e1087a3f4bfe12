#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmpt/param.hpp"

namespace mmpt {

struct AdamWConfig {
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
    Real weight_decay = 0.01;
};

// Adam with decoupled weight decay. Moments are kept per parameter name so
// they can round-trip through checkpoints.
class AdamW {
  public:
    struct Slot {
        std::vector<Real> m;
        std::vector<Real> v;
    };

    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Applies one update to every trainable parameter. A trainable parameter
    // without a populated gradient is an error.
    void step(ParamStore& params, Real lr);

    uint64_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::unordered_map<std::string, Slot>& slots() const { return slots_; }

    // Checkpoint restore.
    void set_state(uint64_t step_count, std::unordered_map<std::string, Slot> slots);
    // Forgets moments for one parameter, e.g. after its shape changed.
    void reset_slot(const std::string& name);

  private:
    AdamWConfig cfg_;
    uint64_t step_count_ = 0;
    std::unordered_map<std::string, Slot> slots_;
};

// Scales all trainable gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
Real clip_global_norm(ParamStore& params, Real max_norm);

}  // namespace mmpt
