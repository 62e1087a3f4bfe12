#include "mmpt/generate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"
#include "mmpt/rng.hpp"

namespace mmpt {

namespace {

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

std::vector<Real> log_softmax(const std::vector<Real>& logits) {
    Real mx = kNegInf;
    for (Real v : logits) mx = std::max(mx, v);
    std::vector<Real> out(logits.size(), kNegInf);
    if (mx == kNegInf) return out;
    Real sum = 0.0;
    for (Real v : logits)
        if (v != kNegInf) sum += std::exp(v - mx);
    const Real lse = mx + std::log(sum);
    for (size_t i = 0; i < logits.size(); ++i)
        if (logits[i] != kNegInf) out[i] = logits[i] - lse;
    return out;
}

}  // namespace

void GenerationPreset::validate() const {
    if (max_new_tokens < 1)
        throw ConfigError("preset '" + name + "': max_new_tokens must be >= 1");
    if (beam_size < 1) throw ConfigError("preset '" + name + "': beam_size must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0))
        throw ConfigError("preset '" + name + "': top_p must be in (0, 1]");
    if (top_k < 1) throw ConfigError("preset '" + name + "': top_k must be >= 1");
    if (no_repeat_ngram < 0)
        throw ConfigError("preset '" + name + "': no_repeat_ngram must be >= 0");
}

std::vector<GenerationPreset> builtin_presets() {
    return {
        {"Image Description", 64, 5, 1.0, 1, -2.0, 2, false},
        {"Open-VQA image", 64, 5, 1.0, 1, -2.0, 2, false},
        {"Video Description", 128, 1, 0.9, 3, 1.0, 3, true},
        {"Open-VQA video", 128, 3, 1.0, 1, -1.0, 3, false},
        {"OwlEval Description", 128, 1, 0.9, 3, 1.0, 3, true},
        {"OwlEval", 256, 3, 0.9, 3, 1.0, 3, true},
        {"demo", 256, 3, 0.9, 3, 1.0, 3, true},
    };
}

std::vector<GenerationPreset> load_presets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open preset file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("preset file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_array()) throw ConfigError("preset file '" + path + "' must hold an array");
    std::vector<GenerationPreset> out;
    for (const auto& e : j) {
        try {
            GenerationPreset p;
            p.name = e.at("name").get<std::string>();
            p.max_new_tokens = e.at("max_new_tokens").get<int>();
            p.beam_size = e.at("beam_size").get<int>();
            p.top_p = e.at("top_p").get<Real>();
            p.top_k = e.at("top_k").get<int>();
            p.length_penalty = e.at("length_penalty").get<Real>();
            p.no_repeat_ngram = e.at("no_repeat_ngram").get<int>();
            p.do_sample = e.at("do_sample").get<bool>();
            p.validate();
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e2) {
            throw ConfigError("preset file '" + path + "': bad entry: " + e2.what());
        }
    }
    return out;
}

void save_presets(const std::string& path, const std::vector<GenerationPreset>& presets) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : presets) {
        j.push_back({{"name", p.name},
                     {"max_new_tokens", p.max_new_tokens},
                     {"beam_size", p.beam_size},
                     {"top_p", p.top_p},
                     {"top_k", p.top_k},
                     {"length_penalty", p.length_penalty},
                     {"no_repeat_ngram", p.no_repeat_ngram},
                     {"do_sample", p.do_sample}});
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write preset file '" + path + "'");
    out << j.dump(2) << "\n";
}

const GenerationPreset& preset_by_name(const std::vector<GenerationPreset>& presets,
                                       const std::string& name) {
    for (const auto& p : presets)
        if (p.name == name) return p;
    std::ostringstream os;
    os << "unknown preset '" << name << "'; available:";
    for (const auto& p : presets) os << " '" << p.name << "'";
    throw ConfigError(os.str());
}

ModelLogitsProvider::ModelLogitsProvider(const MultimodalLM& model, std::optional<Tensor> vision)
    : model_(model), vision_(std::move(vision)) {}

int ModelLogitsProvider::vocab() const { return model_.config().vocab_size; }

std::vector<Real> ModelLogitsProvider::next_logits(const std::vector<int>& text) {
    NoGradGuard guard;
    Tensor logits = model_.forward(vision_, text);
    const int64_t v = logits.dim(1);
    const int64_t last = logits.dim(0) - 1;
    const Real* row = logits.data().data() + last * v;
    return std::vector<Real>(row, row + v);
}

Real hypothesis_score(const BeamHypothesis& h, Real length_penalty) {
    const Real len = static_cast<Real>(std::max<size_t>(1, h.tokens.size()));
    return h.logprob / std::pow(len, length_penalty);
}

void apply_no_repeat_ngram(const std::vector<int>& prefix, int n, std::vector<Real>& logits) {
    if (n <= 0) return;
    const size_t ctx = static_cast<size_t>(n) - 1;
    if (prefix.size() < static_cast<size_t>(n)) return;
    // A candidate token t is banned when (last n-1 tokens, t) already occurs.
    const int* tail = prefix.data() + (prefix.size() - ctx);
    for (size_t start = 0; start + static_cast<size_t>(n) <= prefix.size(); ++start) {
        if (std::equal(tail, tail + ctx, prefix.data() + start)) {
            const int banned = prefix[start + ctx];
            if (banned >= 0 && static_cast<size_t>(banned) < logits.size())
                logits[static_cast<size_t>(banned)] = kNegInf;
        }
    }
}

std::vector<Real> top_k_top_p_filter(const std::vector<Real>& logits, int k, Real p) {
    if (k < 1) throw ConfigError("top_k_top_p_filter: k must be >= 1");
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top_k_top_p_filter: p must be in (0, 1]");
    std::vector<size_t> order(logits.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return logits[a] > logits[b]; });
    std::vector<size_t> kept;
    for (size_t i = 0; i < order.size() && kept.size() < static_cast<size_t>(k); ++i) {
        if (logits[order[i]] == kNegInf) break;
        kept.push_back(order[i]);
    }
    std::vector<Real> probs(logits.size(), 0.0);
    if (kept.empty()) return probs;

    // Softmax restricted to the kept set.
    const Real mx = logits[kept.front()];
    Real denom = 0.0;
    for (size_t idx : kept) denom += std::exp(logits[idx] - mx);
    size_t cut = kept.size();
    Real cum = 0.0;
    for (size_t i = 0; i < kept.size(); ++i) {
        cum += std::exp(logits[kept[i]] - mx) / denom;
        if (cum >= p - 1e-12) {
            cut = i + 1;
            break;
        }
    }
    kept.resize(cut);
    Real total = 0.0;
    for (size_t idx : kept) total += std::exp(logits[idx] - mx);
    for (size_t idx : kept) probs[idx] = std::exp(logits[idx] - mx) / total;
    return probs;
}

namespace {

BeamHypothesis decode_beam(LogitsProvider& provider, const std::vector<int>& prompt,
                           const GenerationPreset& preset, int eos_id) {
    const int vocab = provider.vocab();
    std::vector<BeamHypothesis> active{BeamHypothesis{}};
    std::vector<BeamHypothesis> finished;

    struct Candidate {
        size_t hyp;
        int token;
        Real logprob;
    };

    for (int step = 0; step < preset.max_new_tokens && !active.empty(); ++step) {
        std::vector<Candidate> cands;
        cands.reserve(active.size() * static_cast<size_t>(vocab));
        for (size_t hi = 0; hi < active.size(); ++hi) {
            std::vector<int> ctx = prompt;
            ctx.insert(ctx.end(), active[hi].tokens.begin(), active[hi].tokens.end());
            std::vector<Real> logits = provider.next_logits(ctx);
            apply_no_repeat_ngram(ctx, preset.no_repeat_ngram, logits);
            const std::vector<Real> lp = log_softmax(logits);
            for (int t = 0; t < vocab; ++t)
                if (lp[static_cast<size_t>(t)] != kNegInf)
                    cands.push_back({hi, t, active[hi].logprob + lp[static_cast<size_t>(t)]});
        }
        // Stable sort keeps (hypothesis index, token id) order on ties, so the
        // whole search is deterministic.
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) {
                             return a.logprob > b.logprob;
                         });
        std::vector<BeamHypothesis> next;
        for (const Candidate& c : cands) {
            BeamHypothesis h = active[c.hyp];
            h.tokens.push_back(c.token);
            h.logprob = c.logprob;
            if (c.token == eos_id) {
                h.finished = true;
                finished.push_back(std::move(h));
            } else if (next.size() < static_cast<size_t>(preset.beam_size)) {
                next.push_back(std::move(h));
            }
            if (next.size() >= static_cast<size_t>(preset.beam_size)) break;
        }
        active = std::move(next);
    }
    for (BeamHypothesis& h : active) {
        h.finished = true;
        finished.push_back(std::move(h));
    }
    if (finished.empty()) throw Error("decode: every hypothesis was banned before step one");

    size_t best = 0;
    Real best_score = hypothesis_score(finished[0], preset.length_penalty);
    for (size_t i = 1; i < finished.size(); ++i) {
        const Real s = hypothesis_score(finished[i], preset.length_penalty);
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return finished[best];
}

BeamHypothesis decode_sample(LogitsProvider& provider, const std::vector<int>& prompt,
                             const GenerationPreset& preset, int eos_id, uint64_t seed) {
    Rng rng(seed);
    std::optional<BeamHypothesis> best;
    Real best_score = kNegInf;
    for (int trial = 0; trial < preset.beam_size; ++trial) {
        BeamHypothesis h;
        for (int step = 0; step < preset.max_new_tokens; ++step) {
            std::vector<int> ctx = prompt;
            ctx.insert(ctx.end(), h.tokens.begin(), h.tokens.end());
            std::vector<Real> logits = provider.next_logits(ctx);
            apply_no_repeat_ngram(ctx, preset.no_repeat_ngram, logits);
            const std::vector<Real> lp = log_softmax(logits);
            const std::vector<Real> probs =
                top_k_top_p_filter(logits, preset.top_k, preset.top_p);
            const Real u = rng.uniform();
            Real cum = 0.0;
            int pick = -1;
            for (size_t t = 0; t < probs.size(); ++t) {
                if (probs[t] <= 0.0) continue;
                cum += probs[t];
                pick = static_cast<int>(t);
                if (u < cum) break;
            }
            if (pick < 0) throw Error("decode: every hypothesis was banned before step one");
            h.tokens.push_back(pick);
            h.logprob += lp[static_cast<size_t>(pick)];
            if (pick == eos_id) break;
        }
        h.finished = true;
        const Real s = hypothesis_score(h, preset.length_penalty);
        if (!best || s > best_score) {
            best = std::move(h);
            best_score = s;
        }
    }
    return *best;
}

}  // namespace

BeamHypothesis decode_tokens(LogitsProvider& provider, const std::vector<int>& prompt,
                             const GenerationPreset& preset, int eos_id, uint64_t seed) {
    preset.validate();
    if (preset.do_sample) return decode_sample(provider, prompt, preset, eos_id, seed);
    return decode_beam(provider, prompt, preset, eos_id);
}

GenerationResult generate(const MultimodalLM& model, const ByteTokenizer& tok,
                          const std::optional<Tensor>& vision, const std::string& prompt_text,
                          const GenerationPreset& preset, uint64_t seed) {
    preset.validate();
    std::vector<int> prompt{ByteTokenizer::kBos};
    const std::vector<int> body = tok.encode(prompt_text);
    prompt.insert(prompt.end(), body.begin(), body.end());

    const int64_t offset = model.text_offset(vision.has_value());
    const int64_t need =
        offset + static_cast<int64_t>(prompt.size()) + preset.max_new_tokens;
    if (need > model.config().max_seq_len) {
        std::ostringstream os;
        os << "generate: prompt needs " << need << " positions (vision prefix " << offset
           << " + prompt " << prompt.size() << " + max_new_tokens " << preset.max_new_tokens
           << ") but the context holds " << model.config().max_seq_len;
        throw DataError(os.str());
    }

    ModelLogitsProvider provider(model, vision);
    BeamHypothesis best = decode_tokens(provider, prompt, preset, ByteTokenizer::kEos, seed);
    GenerationResult res;
    res.tokens = best.tokens;
    res.text = tok.decode(best.tokens);
    res.score = hypothesis_score(best, preset.length_penalty);
    return res;
}

std::string render_session_prompt(const DialogSession& session, const std::string& user_msg) {
    std::ostringstream os;
    for (const DialogRound& r : session.rounds) {
        os << "User: " << r.user << "\n";
        os << "Assistant: " << r.assistant << "\n";
    }
    os << "User: " << user_msg << "\n";
    os << "Assistant:";
    return os.str();
}

void describe_first(DialogSession& session, const MultimodalLM& model, const ByteTokenizer& tok,
                    const std::optional<Tensor>& vision, const GenerationPreset& preset,
                    uint64_t seed) {
    if (!session.rounds.empty())
        throw ConfigError("describe_first: session already has rounds");
    const std::string prompt = render_session_prompt(session, kDescribeFirstPrompt);
    GenerationResult res = generate(model, tok, vision, prompt, preset, seed);
    session.rounds.push_back({kDescribeFirstPrompt, res.text});
}

}  // namespace mmpt
