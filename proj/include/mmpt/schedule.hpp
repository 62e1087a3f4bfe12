#pragma once

#include <cstdint>
#include <string>

#include "mmpt/decoder.hpp"

namespace mmpt {

struct StageConfig {
    std::string name;  // pretrain224 | pretrain420 | finetune
    int64_t total_steps = 0;
    Real peak_lr = 0.0;
    Real warmup_rate = 0.05;
    Real floor_lr = 0.0;
    int batch_size = 8;
    int resolution = 224;
    LossMaskPolicy mask_policy = LossMaskPolicy::kAllTokens;
    // 0 writes only the final checkpoint.
    int64_t checkpoint_interval = 0;

    void validate() const;

    // The published training recipe at full scale.
    static StageConfig paper_pretrain224();
    static StageConfig paper_pretrain420();
    static StageConfig paper_finetune();
};

// Linear warmup from zero to the peak over warmup_rate of the run, then
// linear decay down to the floor at the final step.
struct Schedule {
    int64_t total_steps = 0;
    int64_t warmup_steps = 0;
    Real peak_lr = 0.0;
    Real floor_lr = 0.0;

    static Schedule from(const StageConfig& cfg);
    Real lr_at(int64_t step) const;
};

Real lr_at_step(const Schedule& s, int64_t step);

}  // namespace mmpt
