#include "mmpt/schedule.hpp"

#include <cmath>

namespace mmpt {

void StageConfig::validate() const {
    if (name != "pretrain224" && name != "pretrain420" && name != "finetune") {
        throw ConfigError("stage '" + name + "' is not one of pretrain224/pretrain420/finetune");
    }
    if (total_steps <= 0) throw ConfigError("stage '" + name + "': total_steps must be positive");
    if (!(warmup_rate > 0.0 && warmup_rate < 1.0)) {
        throw ConfigError("stage '" + name + "': warmup_rate must be in (0, 1)");
    }
    if (floor_lr > peak_lr) {
        throw ConfigError("stage '" + name + "': floor_lr exceeds peak_lr");
    }
    if (peak_lr <= 0.0 || floor_lr < 0.0) {
        throw ConfigError("stage '" + name + "': learning rates must be positive");
    }
    if (batch_size <= 0) throw ConfigError("stage '" + name + "': batch_size must be positive");
    if (resolution <= 0 || resolution % kPatchSize != 0) {
        throw ConfigError("stage '" + name + "': resolution must be a positive multiple of " +
                          std::to_string(kPatchSize));
    }
}

StageConfig StageConfig::paper_pretrain224() {
    StageConfig c;
    c.name = "pretrain224";
    c.total_steps = 100000;
    c.peak_lr = 1e-4;
    c.warmup_rate = 0.05;
    c.floor_lr = 1e-5;
    c.resolution = 224;
    c.mask_policy = LossMaskPolicy::kAllTokens;
    return c;
}

StageConfig StageConfig::paper_pretrain420() {
    StageConfig c;
    c.name = "pretrain420";
    c.total_steps = 10000;
    c.peak_lr = 1e-5;
    c.warmup_rate = 0.05;
    c.floor_lr = 1e-6;
    c.resolution = 420;
    c.mask_policy = LossMaskPolicy::kAllTokens;
    return c;
}

StageConfig StageConfig::paper_finetune() {
    StageConfig c;
    c.name = "finetune";
    c.total_steps = 20000;
    c.peak_lr = 2e-5;
    c.warmup_rate = 0.05;
    c.floor_lr = 2e-6;
    c.resolution = 420;
    c.mask_policy = LossMaskPolicy::kResponseOnly;
    return c;
}

Schedule Schedule::from(const StageConfig& cfg) {
    cfg.validate();
    Schedule s;
    s.total_steps = cfg.total_steps;
    s.warmup_steps = std::max<int64_t>(
        1, std::llround(cfg.warmup_rate * static_cast<Real>(cfg.total_steps)));
    s.peak_lr = cfg.peak_lr;
    s.floor_lr = cfg.floor_lr;
    return s;
}

Real Schedule::lr_at(int64_t step) const {
    if (step < 0 || step > total_steps) {
        throw Error("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                    std::to_string(total_steps) + "]");
    }
    if (step <= warmup_steps) {
        return peak_lr * static_cast<Real>(step) / static_cast<Real>(warmup_steps);
    }
    const Real frac = static_cast<Real>(step - warmup_steps) /
                      static_cast<Real>(total_steps - warmup_steps);
    return peak_lr + (floor_lr - peak_lr) * frac;
}

Real lr_at_step(const Schedule& s, int64_t step) { return s.lr_at(step); }

}  // namespace mmpt
