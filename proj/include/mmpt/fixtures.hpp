#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmpt/mixer.hpp"

namespace mmpt {

// Everything the pipeline needs to run offline: synthetic stand-ins for the
// training mixture, memorization sets, benchmark items, score sheets, and
// the stock decoding presets.
struct FixtureLayout {
    std::string root;
    std::string manifest;
    std::string templates;
    std::string presets;
    std::string judge_prompt;
    std::string prompt_seeds;
    std::string mem32;
    std::string mem16;
    std::string vqa_items_image;
    std::string vqa_items_video;
    std::string sheet_clean;
    std::string sheet_tie3;
    std::string sheet_tie11;
    std::string pipeline224;
    std::string pipeline420;
};

FixtureLayout make_fixtures(const std::string& root, uint64_t seed);

// Plain instruction-sample files: one JSON object per line with
// media/prompt/response/dataset.
void save_instruction_samples(const std::string& path,
                              const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> load_instruction_samples(const std::string& path);

// The exact referee template instantiated with the documentation example.
std::string golden_judge_prompt();

}  // namespace mmpt
