// Command-line entry point: data mixing, staged training, generation, and
// evaluation behind one binary.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmpt/checkpoint.hpp"
#include "mmpt/config_io.hpp"
#include "mmpt/decoder.hpp"
#include "mmpt/errors.hpp"
#include "mmpt/eval.hpp"
#include "mmpt/fixtures.hpp"
#include "mmpt/generate.hpp"
#include "mmpt/image.hpp"
#include "mmpt/log.hpp"
#include "mmpt/mixer.hpp"
#include "mmpt/schedule.hpp"
#include "mmpt/trainer.hpp"

using namespace mmpt;
namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_given = false;
    std::string log_level = "info";
};

RunConfig require_config(const GlobalOpts& g) {
    if (g.config_path.empty())
        throw ConfigError("this command needs --config pointing at a run config file");
    RunConfig rc = load_run_config(g.config_path);
    if (g.seed_given) rc.seed = g.seed;
    return rc;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError(what + " is not set");
    if (!fs::exists(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

std::string card_for(const std::string& ckpt, const std::string& card_flag) {
    if (!card_flag.empty()) return card_flag;
    const std::string suffix = ".ckpt";
    if (ckpt.size() > suffix.size() &&
        ckpt.compare(ckpt.size() - suffix.size(), suffix.size(), suffix) == 0)
        return ckpt.substr(0, ckpt.size() - suffix.size()) + ".card";
    throw ConfigError("cannot derive a card path from '" + ckpt + "'; pass --card");
}

std::vector<GenerationPreset> presets_for(const GlobalOpts& g) {
    if (!g.config_path.empty()) {
        const RunConfig rc = load_run_config(g.config_path);
        if (!rc.presets_path.empty()) {
            require_file(rc.presets_path, "preset file");
            return load_presets(rc.presets_path);
        }
    }
    return builtin_presets();
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string stage;
    std::string init_ckpt;
    std::string init_card;
    bool dry_run = false;
};

int cmd_train(const GlobalOpts& g, const TrainArgs& a) {
    RunConfig rc = require_config(g);
    const auto it = rc.stages.find(a.stage);
    if (it == rc.stages.end())
        throw ConfigError("config defines no stage named '" + a.stage + "'");
    StageConfig stage = it->second;
    stage.validate();

    require_file(rc.manifest_path, "mixture manifest");
    require_file(rc.templates_path, "template file");
    const TaskManifest manifest = TaskManifest::load(rc.manifest_path);
    const TemplateSet templates = TemplateSet::load(rc.templates_path);
    const MixStage mix_stage =
        stage.name == "finetune" ? MixStage::kFinetune : MixStage::kPretrain;

    // Later stages continue from the previous stage's final checkpoint unless
    // an explicit --init checkpoint overrides the lookup.
    std::string init_ckpt = a.init_ckpt, init_card;
    if (!init_ckpt.empty()) {
        init_card = card_for(init_ckpt, a.init_card);
    } else if (stage.name == "pretrain420") {
        init_ckpt = (fs::path(rc.out_dir) / "pretrain224_final.ckpt").string();
        init_card = (fs::path(rc.out_dir) / "pretrain224_final.card").string();
        if (!fs::exists(init_ckpt))
            throw ConfigError("stage pretrain420 needs the pretrain224 checkpoint '" +
                              init_ckpt + "'; run that stage first or pass --init");
    } else if (stage.name == "finetune") {
        init_ckpt = (fs::path(rc.out_dir) / "pretrain420_final.ckpt").string();
        init_card = (fs::path(rc.out_dir) / "pretrain420_final.card").string();
        if (!fs::exists(init_ckpt))
            throw ConfigError("stage finetune needs the pretrain420 checkpoint '" + init_ckpt +
                              "'; run that stage first or pass --init");
    }
    if (!init_ckpt.empty()) {
        require_file(init_ckpt, "initial checkpoint");
        require_file(init_card, "initial model card");
    }

    MixtureSampler sampler(manifest, templates, mix_stage);

    if (a.dry_run) {
        std::printf("stage %s: %lld steps, peak lr %g, floor %g, batch %d, resolution %d\n",
                    stage.name.c_str(), static_cast<long long>(stage.total_steps),
                    stage.peak_lr, stage.floor_lr, stage.batch_size, stage.resolution);
        std::printf("init: %s\n", init_ckpt.empty() ? "fresh model" : init_ckpt.c_str());
        std::printf("mixture (%s): %zu datasets\n",
                    mix_stage == MixStage::kFinetune ? "finetune" : "pretrain",
                    sampler.spec().entries.size());
        std::printf("out dir: %s (dry run, nothing written)\n", rc.out_dir.c_str());
        return 0;
    }

    fs::create_directories(rc.out_dir);
    std::unique_ptr<MultimodalLM> model;
    AdamW opt;
    if (init_ckpt.empty()) {
        model = std::make_unique<MultimodalLM>(rc.model, rc.seed);
    } else {
        // A resolution change rewrites the checkpoint (positional grid
        // interpolation) before training continues.
        const auto card = read_model_card(init_card);
        const ModelConfig init_cfg = ModelConfig::from_card(card);
        if (init_cfg.grid_rows * kPatchSize != stage.resolution) {
            const std::string base =
                (fs::path(rc.out_dir) / (stage.name + "_init")).string();
            log_info("interpolating checkpoint from " +
                     std::to_string(init_cfg.grid_rows * kPatchSize) + " to " +
                     std::to_string(stage.resolution) + " px");
            resolution_bump(init_ckpt, init_card, base + ".ckpt", base + ".card",
                            stage.resolution);
            init_ckpt = base + ".ckpt";
            init_card = base + ".card";
        }
        model = load_model(init_ckpt, init_card, &opt);
    }

    TrainOptions opts;
    opts.out_dir = rc.out_dir;
    opts.seed = rc.seed;
    opts.log_every = 10;
    const SampleSource source = [&sampler](Rng& rng) { return sampler.draw(rng); };
    ByteTokenizer tok;
    const StageResult res = run_stage(*model, opt, source, stage, tok, opts);
    std::printf("stage %s done: %lld steps, final loss %.4f, checkpoint %s\n",
                stage.name.c_str(), static_cast<long long>(res.steps_run), res.final_loss,
                res.checkpoint_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string ckpt, card, media, prompt;
    std::string preset_name = "demo";
    bool interactive = false;
    bool describe = false;
    int max_new_tokens = 0, beam_size = 0, top_k = 0, no_repeat_ngram = -1;
    double top_p = -1.0, length_penalty = 0.0;
    bool max_new_given = false, beam_given = false, top_k_given = false;
    bool top_p_given = false, penalty_given = false, ngram_given = false;
    int do_sample = -1;
};

int cmd_generate(const GlobalOpts& g, const GenerateArgs& a) {
    require_file(a.ckpt, "checkpoint");
    const std::string card = card_for(a.ckpt, a.card);
    require_file(card, "model card");
    if (!a.media.empty()) require_file(a.media, "media path");
    if (!a.interactive && a.prompt.empty() && !a.describe)
        throw ConfigError("pass --prompt, --describe-first, or --interactive");

    GenerationPreset preset = preset_by_name(presets_for(g), a.preset_name);
    if (a.max_new_given) preset.max_new_tokens = a.max_new_tokens;
    if (a.beam_given) preset.beam_size = a.beam_size;
    if (a.top_k_given) preset.top_k = a.top_k;
    if (a.top_p_given) preset.top_p = a.top_p;
    if (a.penalty_given) preset.length_penalty = a.length_penalty;
    if (a.ngram_given) preset.no_repeat_ngram = a.no_repeat_ngram;
    if (a.do_sample >= 0) preset.do_sample = a.do_sample != 0;
    preset.validate();

    const auto model = load_model(a.ckpt, card, nullptr);
    ByteTokenizer tok;
    NoGradGuard no_grad;
    std::optional<Tensor> vision;
    if (!a.media.empty()) vision = model->condense_media(a.media);

    DialogSession session;
    uint64_t seed = g.seed;
    if (a.describe) {
        if (!vision) throw ConfigError("--describe-first needs --media");
        describe_first(session, *model, tok, vision, preset, seed++);
        std::printf("Assistant: %s\n", session.rounds.back().assistant.c_str());
        std::fflush(stdout);
    }

    if (!a.prompt.empty()) {
        const std::string rendered = session.rounds.empty()
                                         ? a.prompt
                                         : render_session_prompt(session, a.prompt);
        const GenerationResult res = generate(*model, tok, vision, rendered, preset, seed++);
        if (session.rounds.empty())
            std::printf("%s\n", res.text.c_str());
        else
            std::printf("Assistant: %s\n", res.text.c_str());
        std::fflush(stdout);
        session.rounds.push_back({a.prompt, res.text});
    }

    if (a.interactive) {
        std::fprintf(stderr, "User: ");
        std::string line;
        while (std::getline(std::cin, line)) {
            if (line.empty()) {
                std::fprintf(stderr, "User: ");
                continue;
            }
            const std::string rendered = render_session_prompt(session, line);
            const GenerationResult res =
                generate(*model, tok, vision, rendered, preset, seed++);
            std::printf("Assistant: %s\n", res.text.c_str());
            std::fflush(stdout);
            session.rounds.push_back({line, res.text});
            std::fprintf(stderr, "User: ");
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string ckpt, card, items;
    std::string judge;  // empty = config default
    std::string out_dir = "eval_out";
    std::string preset_name;  // empty = auto per media type
    int64_t limit = 0;
    bool dry_run = false;
};

int cmd_eval(const GlobalOpts& g, const EvalArgs& a) {
    require_file(a.ckpt, "checkpoint");
    const std::string card = card_for(a.ckpt, a.card);
    require_file(card, "model card");
    require_file(a.items, "benchmark items file");
    std::vector<OpenVQAItem> items = load_vqa_items(a.items);
    if (a.limit > 0 && static_cast<int64_t>(items.size()) > a.limit)
        items.resize(static_cast<size_t>(a.limit));

    std::string judge_kind = a.judge;
    ClientConfig client_cfg;
    if (!g.config_path.empty()) {
        const RunConfig rc = load_run_config(g.config_path);
        if (judge_kind.empty()) judge_kind = rc.judge;
        client_cfg = rc.client;
    }
    if (judge_kind.empty()) judge_kind = "stub";
    if (judge_kind != "stub" && judge_kind != "remote")
        throw ConfigError("--judge must be 'stub' or 'remote'");

    const auto presets = presets_for(g);
    if (a.dry_run) {
        int videos = 0;
        for (const auto& item : items) videos += is_video_path(item.media) ? 1 : 0;
        std::printf("%zu items (%d video), judge %s, out dir %s (dry run, nothing written)\n",
                    items.size(), videos, judge_kind.c_str(), a.out_dir.c_str());
        return 0;
    }

    const auto model = load_model(a.ckpt, card, nullptr);
    ByteTokenizer tok;
    std::unique_ptr<ChatClient> remote;
    std::unique_ptr<Judge> judge;
    if (judge_kind == "remote") {
        remote = std::make_unique<RemoteChatClient>(client_cfg);
        judge = std::make_unique<RemoteJudge>(*remote);
    } else {
        judge = std::make_unique<StubJudge>();
    }

    std::vector<std::pair<std::string, std::string>> predictions;
    std::vector<JudgeVerdict> verdicts;
    {
        NoGradGuard no_grad;
        uint64_t seed = g.seed;
        for (const auto& item : items) {
            const std::string preset_name =
                !a.preset_name.empty()
                    ? a.preset_name
                    : (is_video_path(item.media) ? "Open-VQA video" : "Open-VQA image");
            const GenerationPreset& preset = preset_by_name(presets, preset_name);
            const Tensor vision = model->condense_media(item.media);
            const GenerationResult res =
                generate(*model, tok, vision, item.question, preset, seed++);
            predictions.emplace_back(item.id, res.text);
            verdicts.push_back(judge->judge(item, res.text));
            log_debug("item " + item.id + " -> \"" + res.text + "\" (" +
                      verdict_name(verdicts.back().verdict) + ")");
        }
    }

    fs::create_directories(a.out_dir);
    {
        std::ofstream out(fs::path(a.out_dir) / "predictions.jsonl");
        for (const auto& [id, text] : predictions)
            out << nlohmann::json{{"id", id}, {"prediction", text}}.dump(
                       -1, ' ', false, nlohmann::json::error_handler_t::replace)
                << "\n";
    }
    save_verdicts((fs::path(a.out_dir) / "verdicts.jsonl").string(), verdicts);
    const CategoryReport report = aggregate(items, verdicts);
    {
        std::ofstream out(fs::path(a.out_dir) / "report.txt");
        out << report.to_table();
    }
    {
        std::ofstream out(fs::path(a.out_dir) / "report.json");
        out << report.to_json() << "\n";
    }
    std::printf("%s", report.to_table().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// mix

struct MixArgs {
    std::string stage = "pretrain";
    std::string out;
    int64_t count = 1000;
    bool dry_run = false;
};

int cmd_mix(const GlobalOpts& g, const MixArgs& a) {
    RunConfig rc = require_config(g);
    require_file(rc.manifest_path, "mixture manifest");
    const TaskManifest manifest = TaskManifest::load(rc.manifest_path);
    MixStage stage;
    if (a.stage == "pretrain")
        stage = MixStage::kPretrain;
    else if (a.stage == "finetune")
        stage = MixStage::kFinetune;
    else
        throw ConfigError("--stage must be 'pretrain' or 'finetune'");
    const MixtureSpec spec = MixtureSpec::build(manifest, stage);

    if (a.dry_run || a.out.empty()) {
        std::printf("%-28s %10s %14s\n", "dataset", "weight", "expected draws");
        for (const auto& entry : spec.entries)
            std::printf("%-28s %10.4f %14.1f\n", entry.name.c_str(), entry.weight,
                        entry.weight * static_cast<double>(a.count));
        std::printf("(%zu datasets, %lld draws%s)\n", spec.entries.size(),
                    static_cast<long long>(a.count),
                    a.dry_run ? ", dry run, nothing written" : "");
        return 0;
    }

    require_file(rc.templates_path, "template file");
    const TemplateSet templates = TemplateSet::load(rc.templates_path);
    MixtureSampler sampler(manifest, templates, stage);
    Rng rng(rc.seed);
    std::vector<InstructionSample> samples;
    samples.reserve(static_cast<size_t>(a.count));
    for (int64_t i = 0; i < a.count; ++i) samples.push_back(sampler.draw(rng));
    std::shuffle(samples.begin(), samples.end(), rng.engine());
    save_instruction_samples(a.out, samples);

    ByteTokenizer tok;
    const TokenCounts counts = count_tokens(samples, tok);
    std::printf("wrote %zu samples (%lld text tokens) to %s\n", samples.size(),
                static_cast<long long>(counts.total), a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// expand-prompts

struct ExpandArgs {
    std::string seeds;
    std::string client = "stub";
    std::string out;
    bool dry_run = false;
};

int cmd_expand_prompts(const GlobalOpts& g, const ExpandArgs& a) {
    require_file(a.seeds, "seed prompt file");
    std::vector<std::string> seeds;
    {
        std::ifstream in(a.seeds);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) seeds.push_back(line);
    }
    if (seeds.empty()) throw DataError("seed prompt file '" + a.seeds + "' is empty");

    std::unique_ptr<ChatClient> client;
    if (a.client == "stub") {
        client = make_echo_client();
    } else if (a.client == "remote") {
        RunConfig rc = require_config(g);
        client = std::make_unique<RemoteChatClient>(rc.client);
    } else {
        throw ConfigError("--client must be 'stub' or 'remote'");
    }

    const std::vector<std::string> expanded = expand_prompts(seeds, *client);
    if (a.dry_run || a.out.empty()) {
        for (const auto& p : expanded) std::printf("%s\n", p.c_str());
        if (a.dry_run) std::printf("(%zu prompts, dry run, nothing written)\n", expanded.size());
        return 0;
    }
    std::ofstream out(a.out);
    if (!out) throw DataError("cannot write '" + a.out + "'");
    for (const auto& p : expanded) out << p << "\n";
    std::printf("wrote %zu prompts to %s\n", expanded.size(), a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// make-fixtures

struct FixtureArgs {
    std::string out = "fixtures";
    bool dry_run = false;
};

int cmd_make_fixtures(const GlobalOpts& g, const FixtureArgs& a) {
    if (a.dry_run) {
        std::printf("would create synthetic corpus under %s (dry run, nothing written)\n",
                    a.out.c_str());
        return 0;
    }
    const FixtureLayout layout = make_fixtures(a.out, g.seed);
    std::printf("fixtures ready under %s\n", layout.root.c_str());
    std::printf("  manifest:  %s\n", layout.manifest.c_str());
    std::printf("  templates: %s\n", layout.templates.c_str());
    std::printf("  presets:   %s\n", layout.presets.c_str());
    std::printf("  mem32:     %s\n", layout.mem32.c_str());
    std::printf("  vqa items: %s / %s\n", layout.vqa_items_image.c_str(),
                layout.vqa_items_video.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal prefix-tuning toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run config file (JSON)");
    auto* seed_opt = app.add_option("--seed", g.seed, "random seed (default 0)");
    app.add_option("--log-level", g.log_level, "debug|info|warn|error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "run one training stage");
    train->add_option("--stage", train_args.stage, "stage name from the config")->required();
    train->add_option("--init", train_args.init_ckpt, "initial checkpoint (overrides lookup)");
    train->add_option("--init-card", train_args.init_card, "card for --init");
    train->add_flag("--dry-run", train_args.dry_run, "validate and print the plan only");

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "decode a response from a checkpoint");
    gen->add_option("--ckpt", gen_args.ckpt, "model checkpoint (.ckpt)")->required();
    gen->add_option("--card", gen_args.card, "model card (default: derived from --ckpt)");
    gen->add_option("--media", gen_args.media, "image file or video directory");
    gen->add_option("--prompt", gen_args.prompt, "prompt text");
    gen->add_option("--preset", gen_args.preset_name, "decoding preset name (default demo)");
    gen->add_flag("--interactive", gen_args.interactive, "multi-turn session on stdin");
    gen->add_flag("--describe-first", gen_args.describe,
                  "open the session with the fixed description prompt");
    auto* o1 = gen->add_option("--max-new-tokens", gen_args.max_new_tokens);
    auto* o2 = gen->add_option("--beam-size", gen_args.beam_size);
    auto* o3 = gen->add_option("--top-k", gen_args.top_k);
    auto* o4 = gen->add_option("--top-p", gen_args.top_p);
    auto* o5 = gen->add_option("--length-penalty", gen_args.length_penalty);
    auto* o6 = gen->add_option("--no-repeat-ngram", gen_args.no_repeat_ngram);
    gen->add_option("--do-sample", gen_args.do_sample, "1 samples, 0 forces beam search");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "generate, judge, and aggregate a benchmark");
    eval->add_option("--ckpt", eval_args.ckpt, "model checkpoint (.ckpt)")->required();
    eval->add_option("--card", eval_args.card, "model card (default: derived from --ckpt)");
    eval->add_option("--items", eval_args.items, "benchmark items (JSONL)")->required();
    eval->add_option("--judge", eval_args.judge, "stub|remote (default from config, else stub)");
    eval->add_option("--out", eval_args.out_dir, "output directory (default eval_out)");
    eval->add_option("--preset", eval_args.preset_name,
                     "preset override (default: per media type)");
    eval->add_option("--limit", eval_args.limit, "evaluate only the first N items");
    eval->add_flag("--dry-run", eval_args.dry_run, "validate and print the plan only");

    MixArgs mix_args;
    auto* mix = app.add_subcommand("mix", "inspect or materialize the training mixture");
    mix->add_option("--stage", mix_args.stage, "pretrain|finetune (default pretrain)");
    mix->add_option("--count", mix_args.count, "number of draws (default 1000)");
    mix->add_option("--out", mix_args.out, "write drawn samples to this file");
    mix->add_flag("--dry-run", mix_args.dry_run, "print weights only, never write");

    ExpandArgs expand_args;
    auto* expand = app.add_subcommand("expand-prompts", "grow the prompt template pool");
    expand->add_option("--seeds", expand_args.seeds, "seed prompts, one per line")->required();
    expand->add_option("--client", expand_args.client, "stub|remote (default stub)");
    expand->add_option("--out", expand_args.out, "output file (default: print)");
    expand->add_flag("--dry-run", expand_args.dry_run, "print results only, never write");

    FixtureArgs fixture_args;
    auto* fixtures = app.add_subcommand("make-fixtures", "write the synthetic offline corpus");
    fixtures->add_option("--out", fixture_args.out, "target directory (default fixtures)");
    fixtures->add_flag("--dry-run", fixture_args.dry_run, "print the plan only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    g.seed_given = seed_opt->count() > 0;
    set_log_level(parse_log_level(g.log_level));
    gen_args.max_new_given = o1->count() > 0;
    gen_args.beam_given = o2->count() > 0;
    gen_args.top_k_given = o3->count() > 0;
    gen_args.top_p_given = o4->count() > 0;
    gen_args.penalty_given = o5->count() > 0;
    gen_args.ngram_given = o6->count() > 0;

    try {
        if (train->parsed()) return cmd_train(g, train_args);
        if (gen->parsed()) return cmd_generate(g, gen_args);
        if (eval->parsed()) return cmd_eval(g, eval_args);
        if (mix->parsed()) return cmd_mix(g, mix_args);
        if (expand->parsed()) return cmd_expand_prompts(g, expand_args);
        if (fixtures->parsed()) return cmd_make_fixtures(g, fixture_args);
    } catch (const ConfigError& e) {
        log_error(e.what());
        return 2;
    } catch (const DataError& e) {
        log_error(e.what());
        return 3;
    } catch (const Error& e) {
        log_error(e.what());
        return 4;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 4;
    }
    return 0;
}
