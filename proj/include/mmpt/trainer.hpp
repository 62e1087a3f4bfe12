#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmpt/decoder.hpp"
#include "mmpt/mixer.hpp"
#include "mmpt/optim.hpp"
#include "mmpt/schedule.hpp"
#include "mmpt/tokenizer.hpp"

namespace mmpt {

// One sample after tokenization: the packed text ids, per-position next-token
// targets, and which positions count toward the loss.
struct PackedText {
    std::vector<int> text;       // <BOS> prompt response <EOS>
    std::vector<int> targets;    // targets[i] predicts text[i+1]; last entry unused
    std::vector<uint8_t> mask;   // 1 where the position contributes to the loss
    size_t prompt_len = 0;       // kept prompt tokens, <BOS> excluded
    bool truncated = false;
};

// Tokenizes and packs one sample into at most `budget` positions. On
// overflow, tokens are dropped starting at the left end of the prompt (the
// side away from the response); the response itself loses its left end only
// if the prompt is already gone.
PackedText pack_sample(const InstructionSample& sample, const ByteTokenizer& tok,
                       LossMaskPolicy policy, int64_t budget);

struct StepStats {
    Real loss = 0.0;       // batch mean, measured before the update
    Real grad_norm = 0.0;  // global norm before clipping
    Real lr = 0.0;
    int64_t text_tokens = 0;
    int truncations = 0;
};

// Forward + masked cross-entropy over the batch mean, backward, global-norm
// clip at 1.0, one AdamW update at `lr`. Media paths are loaded and encoded
// through the model's vision pathway inside the autodiff graph.
StepStats training_step(MultimodalLM& model, AdamW& opt, Real lr,
                        const std::vector<InstructionSample>& batch,
                        const ByteTokenizer& tok, LossMaskPolicy policy);

using SampleSource = std::function<InstructionSample(Rng&)>;

struct TrainOptions {
    std::string out_dir;
    uint64_t seed = 0;
    // Early exit once the batch loss drops under this; 0 disables.
    Real stop_below_loss = 0.0;
    int64_t log_every = 1;
};

struct StageResult {
    std::string checkpoint_path;
    std::string card_path;
    std::string log_path;
    int64_t steps_run = 0;
    Real final_loss = 0.0;
    Real best_loss = 0.0;
    int64_t truncation_warnings = 0;
    int64_t tokens_seen = 0;
};

// Runs one stage: draws batches from `source`, steps the schedule, writes
// periodic checkpoints plus the final one, and appends one log record per
// step as newline-delimited JSON {step, lr, loss, tokens_seen}.
StageResult run_stage(MultimodalLM& model, AdamW& opt, const SampleSource& source,
                      const StageConfig& stage, const ByteTokenizer& tok,
                      const TrainOptions& opts);

// Rewrites a checkpoint for a larger input resolution: the vision positional
// grid is bilinearly interpolated to the new size, every other parameter is
// copied verbatim, and the interpolated grid's optimizer moments are dropped.
// The model card is updated alongside.
void resolution_bump(const std::string& ckpt_in, const std::string& card_in,
                     const std::string& ckpt_out, const std::string& card_out,
                     int new_resolution);

}  // namespace mmpt
