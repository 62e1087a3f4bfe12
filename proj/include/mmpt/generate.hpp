#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmpt/decoder.hpp"
#include "mmpt/tensor.hpp"
#include "mmpt/tokenizer.hpp"

namespace mmpt {

// One row of the decoding-preset table.
struct GenerationPreset {
    std::string name;
    int max_new_tokens = 64;
    int beam_size = 1;
    Real top_p = 1.0;
    int top_k = 1;
    Real length_penalty = 1.0;
    int no_repeat_ngram = 0;
    bool do_sample = false;

    void validate() const;
};

// The seven stock task presets.
std::vector<GenerationPreset> builtin_presets();
std::vector<GenerationPreset> load_presets(const std::string& path);
void save_presets(const std::string& path, const std::vector<GenerationPreset>& presets);
const GenerationPreset& preset_by_name(const std::vector<GenerationPreset>& presets,
                                       const std::string& name);

// Next-token logits source; decoding runs against small hand-built tables in
// tests and against the full model in production.
class LogitsProvider {
  public:
    virtual ~LogitsProvider() = default;
    virtual int vocab() const = 0;
    // `text` is the full token sequence so far (prompt plus generated).
    virtual std::vector<Real> next_logits(const std::vector<int>& text) = 0;
};

class ModelLogitsProvider : public LogitsProvider {
  public:
    ModelLogitsProvider(const MultimodalLM& model, std::optional<Tensor> vision);
    int vocab() const override;
    std::vector<Real> next_logits(const std::vector<int>& text) override;

  private:
    const MultimodalLM& model_;
    std::optional<Tensor> vision_;
};

struct BeamHypothesis {
    // Generated tokens only; ends with <EOS> when the beam stopped on it.
    std::vector<int> tokens;
    Real logprob = 0.0;
    bool finished = false;
};

// logprob / len^length_penalty, with len never below one. Negative penalties
// amplify the (negative) logprob for long sequences and so favor short ones.
Real hypothesis_score(const BeamHypothesis& h, Real length_penalty);

// Bans (sets to -inf) every token that would complete an n-gram already
// present in `prefix`. n = 0 disables.
void apply_no_repeat_ngram(const std::vector<int>& prefix, int n, std::vector<Real>& logits);

// Keeps the k highest logits, then the smallest top slice of those whose
// renormalized probabilities reach p. Returns the final distribution, zero
// outside the kept set.
std::vector<Real> top_k_top_p_filter(const std::vector<Real>& logits, int k, Real p);

// Beam search (do_sample false) or best-of-beam_size independent sampling
// (do_sample true), starting after `prompt`. Each hypothesis stops at <EOS>
// or max_new_tokens; finished hypotheses are set aside and do not occupy beam
// slots. Returns the best hypothesis under hypothesis_score.
BeamHypothesis decode_tokens(LogitsProvider& provider, const std::vector<int>& prompt,
                             const GenerationPreset& preset, int eos_id, uint64_t seed);

struct GenerationResult {
    std::vector<int> tokens;  // generated tokens, <EOS> included when produced
    std::string text;
    Real score = 0.0;
};

// End-to-end: tokenize, check context headroom, decode, detokenize.
GenerationResult generate(const MultimodalLM& model, const ByteTokenizer& tok,
                          const std::optional<Tensor>& vision, const std::string& prompt_text,
                          const GenerationPreset& preset, uint64_t seed);

// Chat-style state for the demo path.
struct DialogRound {
    std::string user;
    std::string assistant;
};

struct DialogSession {
    std::vector<DialogRound> rounds;
};

// Renders completed rounds plus the pending user turn in the same
// "User:/Assistant:" convention the dialog training data uses.
std::string render_session_prompt(const DialogSession& session, const std::string& user_msg);

inline constexpr const char* kDescribeFirstPrompt = "Describe the image in detail";

// Runs the fixed detail-description prompt as round zero of an empty session.
void describe_first(DialogSession& session, const MultimodalLM& model, const ByteTokenizer& tok,
                    const std::optional<Tensor>& vision, const GenerationPreset& preset,
                    uint64_t seed);

}  // namespace mmpt
