#include "mmpt/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"
#include "mmpt/image.hpp"
#include "mmpt/log.hpp"

namespace mmpt {

PackedText pack_sample(const InstructionSample& sample, const ByteTokenizer& tok,
                       LossMaskPolicy policy, int64_t budget) {
    if (budget < 2)
        throw DataError("pack_sample: context budget " + std::to_string(budget) +
                        " cannot hold <BOS> and <EOS>");
    std::vector<int> prompt = tok.encode(sample.prompt);
    std::vector<int> response = tok.encode(sample.response);

    PackedText out;
    int64_t total = 2 + static_cast<int64_t>(prompt.size() + response.size());
    if (total > budget) {
        out.truncated = true;
        int64_t drop = total - budget;
        const int64_t from_prompt = std::min<int64_t>(drop, prompt.size());
        prompt.erase(prompt.begin(), prompt.begin() + from_prompt);
        drop -= from_prompt;
        if (drop > 0) {
            if (drop >= static_cast<int64_t>(response.size()))
                throw DataError("pack_sample: response alone exceeds the context budget");
            response.erase(response.begin(), response.begin() + drop);
        }
    }

    out.prompt_len = prompt.size();
    out.text.reserve(2 + prompt.size() + response.size());
    out.text.push_back(ByteTokenizer::kBos);
    out.text.insert(out.text.end(), prompt.begin(), prompt.end());
    out.text.insert(out.text.end(), response.begin(), response.end());
    out.text.push_back(ByteTokenizer::kEos);

    const size_t len = out.text.size();
    out.targets.assign(len, 0);
    out.mask.assign(len, 0);
    for (size_t i = 0; i + 1 < len; ++i) {
        out.targets[i] = out.text[i + 1];
        const bool active =
            policy == LossMaskPolicy::kAllTokens || i >= out.prompt_len;
        out.mask[i] = active ? 1 : 0;
    }
    return out;
}

StepStats training_step(MultimodalLM& model, AdamW& opt, Real lr,
                        const std::vector<InstructionSample>& batch,
                        const ByteTokenizer& tok, LossMaskPolicy policy) {
    if (batch.empty()) throw ConfigError("training_step: batch is empty");
    StepStats stats;
    stats.lr = lr;
    model.params().zero_grads();

    Tensor total;
    for (const InstructionSample& sample : batch) {
        std::optional<Tensor> vision;
        if (!sample.media.empty()) vision = model.condense_media(sample.media);
        const int64_t offset = model.text_offset(vision.has_value());
        const int64_t budget = model.config().max_seq_len - offset;
        PackedText packed = pack_sample(sample, tok, policy, budget);
        if (packed.truncated) ++stats.truncations;
        stats.text_tokens += static_cast<int64_t>(packed.text.size());

        Tensor logits = model.forward(vision, packed.text);
        const int64_t len = static_cast<int64_t>(packed.text.size());
        Tensor text_logits =
            offset > 0 ? slice_rows(logits, offset, offset + len) : logits;
        Tensor loss = softmax_cross_entropy(text_logits, packed.targets, packed.mask);
        total = total.defined() ? add(total, loss) : loss;
    }

    Tensor batch_loss = scale(total, 1.0 / static_cast<Real>(batch.size()));
    stats.loss = batch_loss.item();
    batch_loss.backward();
    stats.grad_norm = clip_global_norm(model.params(), 1.0);
    opt.step(model.params(), lr);
    return stats;
}

StageResult run_stage(MultimodalLM& model, AdamW& opt, const SampleSource& source,
                      const StageConfig& stage, const ByteTokenizer& tok,
                      const TrainOptions& opts) {
    stage.validate();
    if (opts.out_dir.empty()) throw ConfigError("run_stage: out_dir is empty");
    std::filesystem::create_directories(opts.out_dir);
    const std::filesystem::path out_dir(opts.out_dir);

    StageResult res;
    res.log_path = (out_dir / ("train_" + stage.name + ".jsonl")).string();
    std::ofstream log(res.log_path, std::ios::trunc);
    if (!log) throw ConfigError("run_stage: cannot write log '" + res.log_path + "'");

    Rng rng(opts.seed);
    const Schedule sched = Schedule::from(stage);
    res.best_loss = std::numeric_limits<Real>::infinity();

    for (int64_t step = 0; step < stage.total_steps; ++step) {
        std::vector<InstructionSample> batch;
        batch.reserve(static_cast<size_t>(stage.batch_size));
        for (int b = 0; b < stage.batch_size; ++b) batch.push_back(source(rng));

        // Updates sit at 1..total_steps on the lr curve, so the first update
        // is past the zero knot and the last lands on the floor.
        const Real lr = sched.lr_at(step + 1);
        const StepStats stats = training_step(model, opt, lr, batch, tok, stage.mask_policy);

        res.steps_run = step + 1;
        res.tokens_seen += stats.text_tokens;
        res.truncation_warnings += stats.truncations;
        res.final_loss = stats.loss;
        res.best_loss = std::min(res.best_loss, stats.loss);
        if (stats.truncations > 0)
            log_warn("step " + std::to_string(step + 1) + ": truncated " +
                     std::to_string(stats.truncations) + " sample(s) to fit the context");

        if ((step + 1) % std::max<int64_t>(1, opts.log_every) == 0 ||
            step + 1 == stage.total_steps) {
            nlohmann::json j{{"step", step + 1},
                             {"lr", lr},
                             {"loss", stats.loss},
                             {"tokens_seen", res.tokens_seen}};
            log << j.dump() << "\n";
            log.flush();
        }

        if (stage.checkpoint_interval > 0 && (step + 1) % stage.checkpoint_interval == 0 &&
            step + 1 < stage.total_steps) {
            const std::string base =
                (out_dir / (stage.name + "_step" + std::to_string(step + 1))).string();
            save_model(base + ".ckpt", base + ".card", model, &opt);
        }
        if (opts.stop_below_loss > 0.0 && stats.loss < opts.stop_below_loss) break;
    }

    const std::string base = (out_dir / (stage.name + "_final")).string();
    res.checkpoint_path = base + ".ckpt";
    res.card_path = base + ".card";
    save_model(res.checkpoint_path, res.card_path, model, &opt);
    return res;
}

void resolution_bump(const std::string& ckpt_in, const std::string& card_in,
                     const std::string& ckpt_out, const std::string& card_out,
                     int new_resolution) {
    if (new_resolution <= 0 || new_resolution % kPatchSize != 0)
        throw ConfigError("resolution_bump: resolution must be a positive multiple of " +
                          std::to_string(kPatchSize));
    RawCheckpoint ckpt = read_raw_checkpoint(ckpt_in);
    std::map<std::string, std::string> card = read_model_card(card_in);

    const int new_rows = new_resolution / kPatchSize;
    const int new_cols = new_rows;
    const int old_rows = ckpt.grid_rows;
    const int old_cols = ckpt.grid_cols;

    RawParam* pos = nullptr;
    for (RawParam& p : ckpt.params)
        if (p.name == "vision.pos_embed") pos = &p;
    if (!pos) throw DataError("resolution_bump: checkpoint has no vision.pos_embed");
    if (pos->shape.size() != 2 ||
        pos->shape[0] != static_cast<int64_t>(old_rows) * old_cols)
        throw DataError("resolution_bump: vision.pos_embed does not match the header grid");

    if (new_rows != old_rows || new_cols != old_cols) {
        NoGradGuard guard;
        Tensor grid(pos->shape, pos->data);
        Tensor resized = interpolate_pos_embed(grid, old_rows, old_cols, new_rows, new_cols);
        pos->shape = resized.shape();
        pos->data = resized.data();
        if (ckpt.opt) {
            auto& slots = ckpt.opt->slots;
            slots.erase(std::remove_if(slots.begin(), slots.end(),
                                       [](const RawOptSlot& s) {
                                           return s.name == "vision.pos_embed";
                                       }),
                        slots.end());
        }
    }
    ckpt.grid_rows = new_rows;
    ckpt.grid_cols = new_cols;
    card["grid_rows"] = std::to_string(new_rows);
    card["grid_cols"] = std::to_string(new_cols);

    write_raw_checkpoint(ckpt_out, ckpt);
    write_model_card(card_out, card);
}

}  // namespace mmpt
