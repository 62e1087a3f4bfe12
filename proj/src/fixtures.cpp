#include "mmpt/fixtures.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"
#include "mmpt/eval.hpp"
#include "mmpt/generate.hpp"
#include "mmpt/humaneval.hpp"
#include "mmpt/image.hpp"
#include "mmpt/rng.hpp"

namespace mmpt {

namespace {

namespace fs = std::filesystem;

struct DatasetSeed {
    const char* name;
    TaskType type;
    double pretrain;  // percent; 0 = not in the stage
    double finetune;
    const char* prompt;
};

// The full training mixture: names, task types, stage percentages, and the
// per-dataset prompt template.
const DatasetSeed kDatasets[] = {
    {"BlipCapFilt", TaskType::kImageTextPair, 30.525, 0, "Describe the image briefly."},
    {"CC12M", TaskType::kImageTextPair, 2.465, 0,
     "Write a relevant description to pair with the image."},
    {"CC3M", TaskType::kImageTextPair, 10.076, 0,
     "Write a relevant description to pair with the image."},
    {"SBU", TaskType::kImageCaption, 2.987, 0, "Describe the image."},
    {"TextCaps", TaskType::kImageCaption, 0.381, 0,
     "Describe the image shortly by reading the texts."},
    {"COCO Caption", TaskType::kImageCaption, 0.287, 0, "Describe the image briefly."},
    {"CUHK-PEDES", TaskType::kImageCaption, 0.118, 0, "Describe the person in the image."},
    {"Flickr30k", TaskType::kImageCaption, 0.104, 0, "Describe the image briefly."},
    {"Pexels 110k", TaskType::kImageCaption, 0.091, 0, "Describe the image briefly."},
    {"LLaVA Caption", TaskType::kImageCaption, 0, 0.945, "[INSTRUCTION]"},
    {"IAPR TC-12", TaskType::kImageCaption, 0.069, 0,
     "Describe the key elements in the image."},
    {"Visual Genome Caption", TaskType::kImageCaption, 0, 0.798,
     "Describe the image in detail."},
    {"MiniGPT4 IFT", TaskType::kImageCaption, 0, 0.138, "Describe the image in detail."},
    {"Pascal Sentences", TaskType::kImageCaption, 0.003, 0, "Describe the image briefly."},
    {"VGQA", TaskType::kVqa, 8.711, 10.880, "[QUESTION] Give a short answer."},
    {"GQA", TaskType::kVqa, 5.868, 3.999, "[QUESTION] Give a short answer."},
    {"OCRVQA", TaskType::kVqa, 5.364, 12.349, "[QUESTION] Give a short answer."},
    {"VQAv2", TaskType::kVqa, 2.761, 3.449, "[QUESTION] Give a short answer."},
    {"Visual7W", TaskType::kVqa, 0.870, 0.593, "[QUESTION] Give a short answer."},
    {"VizWiz", TaskType::kVqa, 0.128, 0.087, "[QUESTION] Give a short answer."},
    {"OKVQA", TaskType::kVqa, 0.056, 0.038, "[QUESTION] Give a short answer."},
    {"TDIUC", TaskType::kVqa, 4.389, 0, "[QUESTION] Give a short answer."},
    {"WebSRC", TaskType::kVqa, 0, 1.814,
     "Answer the question briefly by reading the webpage. [QUESTION]"},
    {"LLaVA Reasoning", TaskType::kVqa, 0, 3.119, "[QUESTION]"},
    {"TextVQA", TaskType::kVqa, 0, 0.478,
     "Answer the question shortly by reading the texts. [QUESTION]"},
    {"STVQA", TaskType::kVqa, 0, 0.359, "[QUESTION] Give a short answer."},
    {"Places365", TaskType::kClassification, 10.921, 5.000,
     "Where is this? Answer with a place name."},
    {"ImageNet1K", TaskType::kClassification, 7.887, 0,
     "What is in the image? Answer with its name."},
    {"SNLI-VE", TaskType::kClassification, 3.213, 0,
     "Does the image semantically entail the following text? Text: [HYPOTHESIS] Options: 1. "
     "neutral 2. entailment 3. contradiction"},
    {"Visual7W Multi-choice", TaskType::kClassification, 0.849, 0,
     "Choose the correct answer. Question: [QUESTION] Options: [OPTIONS]"},
    {"AirCrowdFood", TaskType::kClassification, 0.609, 0, "What food is it?"},
    {"NLVR2", TaskType::kClassification, 0.518, 0.671,
     "Given the claim \"[HYPOTHESIS]\", is it True or False?"},
    {"WikiArt", TaskType::kClassification, 0.264, 0.180,
     "What artistic movement or style dose this art picture belong to? Answer with a style "
     "name."},
    {"HAR", TaskType::kClassification, 0.078, 0.053,
     "What is the person doing? Answer shortly."},
    {"TimeClassification", TaskType::kClassification, 0.072, 0.049,
     "What is the time now? Give a short answer."},
    {"HatefulMemes", TaskType::kClassification, 0.026, 0,
     "Is \"[MEME]\" a hateful meme? Answer with Yes or No."},
    {"MSR-VTT-QA", TaskType::kVideoVqa, 0, 3.137, "[QUESTION] Give a short answer."},
    {"VLN VQA", TaskType::kVideoVqa, 0, 0.629, "[QUESTION] Give a short answer."},
    {"NeXT-QA", TaskType::kVideoVqa, 0, 0.623, "[QUESTION] Give a short answer."},
    {"MSVD-QA", TaskType::kVideoVqa, 0, 0.611, "[QUESTION] Give a short answer."},
    {"SthV2", TaskType::kVideoCaption, 0, 5.000, "Describe the video shortly."},
    {"VLN Caption", TaskType::kVideoCaption, 0, 5.000, "Describe the video in detail."},
    {"LLaVA Instruction", TaskType::kDialog, 0, 5.845, "[DIALOG]"},
    {"LLaVA Dialog", TaskType::kDialog, 0, 4.155, "[DIALOG]"},
    {"InViG", TaskType::kDialog, 0.310, 0, "[DIALOG]"},
    {"Flan V2", TaskType::kTextInstructions, 0, 15.000, "[INSTRUCTION]"},
    {"LAION OIG Small", TaskType::kTextInstructions, 0, 3.884, "[INSTRUCTION]"},
    {"Alpaca GPT4", TaskType::kTextInstructions, 0, 0.955, "[INSTRUCTION]"},
    {"Unnatural Instruction", TaskType::kTextInstructions, 0, 0.161, "[INSTRUCTION]"},
    {"Baize", TaskType::kTextInstructions, 0, 10.000, "[INSTRUCTION]"},
};

// Single words whose adjacent byte pairs are all distinct, so answers stay
// reachable under a bigram-repeat ban. Prompts are kept upper-case to avoid
// colliding with these lower-case pairs.
const char* kCleanWords[] = {
    "red",    "blue",   "green",  "gold",  "black", "white", "brown",  "pink",
    "gray",   "cyan",   "plum",   "jade",  "ruby",  "mint",  "teal",   "navy",
    "rose",   "sand",   "lime",   "coral", "amber", "pearl", "olive",  "slate",
    "ivory",  "lilac",  "khaki",  "maroon", "salmon", "bronze", "violet", "indigo",
};

const char* kObjects[] = {"square", "circle", "cube", "sphere", "stripe", "frame"};
const char* kPlaces[] = {"beach", "forest", "kitchen", "street", "garden", "office"};
const char* kActions[] = {"running", "waving", "jumping", "reading", "cooking", "drawing"};

std::string slug(const std::string& name) {
    std::string out;
    for (char c : name) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            out.push_back(static_cast<char>(std::tolower(u)));
        else if (!out.empty() && out.back() != '_')
            out.push_back('_');
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

std::string make_image(const fs::path& dir, const std::string& stem, int size, Rng& rng) {
    const float r = static_cast<float>(rng.uniform());
    const float g = static_cast<float>(rng.uniform());
    const float b = static_cast<float>(rng.uniform());
    const fs::path p = dir / (stem + ".img");
    save_raw_image(p.string(), make_solid_image(size, size, r, g, b));
    return p.string();
}

std::string make_video(const fs::path& dir, const std::string& stem, int size, int frames,
                       Rng& rng) {
    const fs::path vdir = dir / stem;
    fs::create_directories(vdir);
    std::ofstream list(vdir / "frames.txt");
    for (int f = 0; f < frames; ++f) {
        const std::string name = "frame" + std::to_string(f) + ".img";
        save_raw_image((vdir / name).string(),
                       make_solid_image(size, size, static_cast<float>(rng.uniform()),
                                        static_cast<float>(rng.uniform()),
                                        static_cast<float>(rng.uniform())));
        list << name << "\n";
    }
    return vdir.string();
}

void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write fixture file '" + path + "'");
    for (const auto& j : rows) out << j.dump() << "\n";
}

nlohmann::json record_json(const TaskRecord& r) {
    nlohmann::json j{{"id", r.id}, {"media", r.media}, {"fields", r.fields},
                     {"response", r.response}};
    if (!r.turns.empty()) {
        nlohmann::json turns = nlohmann::json::array();
        for (const auto& t : r.turns)
            turns.push_back({{"user", t.user}, {"assistant", t.assistant}});
        j["turns"] = turns;
    }
    return j;
}

std::vector<TaskRecord> synth_records(const DatasetSeed& ds,
                                      const std::vector<std::string>& images,
                                      const std::vector<std::string>& videos, Rng& rng,
                                      int count) {
    std::vector<TaskRecord> records;
    const std::string base = slug(ds.name);
    for (int i = 0; i < count; ++i) {
        TaskRecord r;
        r.id = base + "_" + std::to_string(i);
        const std::string& color = kCleanWords[rng.below(std::size(kCleanWords))];
        const std::string& object = kObjects[rng.below(std::size(kObjects))];
        switch (ds.type) {
            case TaskType::kImageTextPair:
            case TaskType::kImageCaption:
                r.media = images[rng.below(images.size())];
                r.response = "a " + color + " " + object + " on a plain background";
                if (ds.prompt == std::string("[INSTRUCTION]"))
                    r.fields["instruction"] = "Describe the image briefly.";
                break;
            case TaskType::kVqa:
                r.media = images[rng.below(images.size())];
                r.fields["question"] = "What color is the " + object + "?";
                r.response = color;
                break;
            case TaskType::kClassification: {
                r.media = images[rng.below(images.size())];
                if (ds.name == std::string("SNLI-VE") || ds.name == std::string("NLVR2")) {
                    r.fields["hypothesis"] = "the " + object + " is " + color;
                    r.response = ds.name == std::string("NLVR2") ? "True" : "entailment";
                } else if (ds.name == std::string("Visual7W Multi-choice")) {
                    r.fields["question"] = "What color is the " + object + "?";
                    r.fields["options"] = "1. " + color + " 2. " +
                                          kCleanWords[rng.below(std::size(kCleanWords))];
                    r.response = color;
                } else if (ds.name == std::string("HatefulMemes")) {
                    r.fields["meme"] = "a " + color + " " + object;
                    r.response = "No";
                } else if (ds.name == std::string("Places365")) {
                    r.response = kPlaces[rng.below(std::size(kPlaces))];
                } else if (ds.name == std::string("HAR")) {
                    r.response = kActions[rng.below(std::size(kActions))];
                } else if (ds.name == std::string("TimeClassification")) {
                    r.response = std::to_string(1 + rng.below(12)) + " o'clock";
                } else {
                    r.response = color + " " + object;
                }
                break;
            }
            case TaskType::kVideoVqa:
                r.media = videos[rng.below(videos.size())];
                r.fields["question"] = "What is the person doing?";
                r.response = kActions[rng.below(std::size(kActions))];
                break;
            case TaskType::kVideoCaption:
                r.media = videos[rng.below(videos.size())];
                r.response = "a " + color + " scene that slowly brightens";
                break;
            case TaskType::kDialog:
                r.media = images[rng.below(images.size())];
                r.turns = {{"What do you see?", "a " + color + " " + object},
                           {"What color is it?", color}};
                break;
            case TaskType::kTextInstructions:
                r.fields["instruction"] = "Write one friendly sentence about the sea.";
                r.response = "the sea is calm today";
                break;
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<InstructionSample> memorization_set(const fs::path& dir, int count, Rng& rng) {
    fs::create_directories(dir / "media");
    std::vector<InstructionSample> samples;
    for (int i = 0; i < count; ++i) {
        InstructionSample s;
        const float hue = static_cast<float>(i) / static_cast<float>(count);
        const fs::path img = dir / "media" / ("item" + std::to_string(i) + ".img");
        save_raw_image(img.string(),
                       make_solid_image(28, 28, hue, 1.0f - hue,
                                        static_cast<float>(rng.uniform())));
        s.media = img.string();
        s.prompt = "WHAT COLOR IS ITEM " + std::to_string(i) + "?";
        s.response = kCleanWords[i % std::size(kCleanWords)];
        s.dataset = "memorization";
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_vqa_items(const std::string& path, const std::vector<std::string>& images,
                     const std::vector<std::string>& videos, Rng& rng) {
    std::vector<nlohmann::json> rows;
    int n = 0;
    auto add = [&](const std::string& media, const std::string& q, const std::string& a,
                   const std::string& cat) {
        rows.push_back({{"id", "vqa_" + std::to_string(n++)},
                        {"media", media},
                        {"question", q},
                        {"answer", a},
                        {"category", cat}});
    };
    if (!videos.empty()) {
        for (int i = 0; i < 5; ++i)
            add(videos[rng.below(videos.size())], "Is the person waving?",
                i % 2 == 0 ? "yes" : "no", "Action (Y/N)");
        for (int i = 0; i < 3; ++i)
            add(videos[rng.below(videos.size())], "What happens first?", "the light turns on",
                "Others");
    } else {
        for (const std::string& cat : image_vqa_categories()) {
            for (int i = 0; i < 4; ++i) {
                const std::string color = kCleanWords[rng.below(std::size(kCleanWords))];
                if (cat == "OCR")
                    add(images[rng.below(images.size())], "What does the sign say?", "open",
                        cat);
                else if (cat == "Counting")
                    add(images[rng.below(images.size())], "How many squares are there?",
                        std::to_string(1 + static_cast<int>(rng.below(4))), cat);
                else if (cat == "Color")
                    add(images[rng.below(images.size())], "What color is the square?", color,
                        cat);
                else if (cat == "Place")
                    add(images[rng.below(images.size())], "Where was this taken?",
                        kPlaces[rng.below(std::size(kPlaces))], cat);
                else if (cat == "Action")
                    add(images[rng.below(images.size())], "What is the person doing?",
                        kActions[rng.below(std::size(kActions))], cat);
                else
                    add(images[rng.below(images.size())], "What stands out here?",
                        color + " tones", cat);
            }
        }
    }
    write_jsonl(path, rows);
}

}  // namespace

std::string golden_judge_prompt() {
    return "Given the question \"What color is the car?\", does the answer \"red\" imply the "
           "answer \"red\"? Answer with Yes or No.";
}

void save_instruction_samples(const std::string& path,
                              const std::vector<InstructionSample>& samples) {
    std::vector<nlohmann::json> rows;
    rows.reserve(samples.size());
    for (const InstructionSample& s : samples)
        rows.push_back({{"media", s.media},
                        {"prompt", s.prompt},
                        {"response", s.response},
                        {"dataset", s.dataset}});
    write_jsonl(path, rows);
}

std::vector<InstructionSample> load_instruction_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open sample file '" + path + "'");
    std::vector<InstructionSample> samples;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            InstructionSample s;
            s.media = j.at("media").get<std::string>();
            s.prompt = j.at("prompt").get<std::string>();
            s.response = j.at("response").get<std::string>();
            s.dataset = j.value("dataset", "");
            samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("sample file '" + path + "' line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return samples;
}

FixtureLayout make_fixtures(const std::string& root, uint64_t seed) {
    Rng rng(seed);
    FixtureLayout out;
    out.root = root;
    const fs::path base(root);
    fs::create_directories(base / "media");
    fs::create_directories(base / "datasets");
    fs::create_directories(base / "sheets");

    std::vector<std::string> images, videos;
    for (int i = 0; i < 6; ++i)
        images.push_back(make_image(base / "media", "img" + std::to_string(i), 28, rng));
    for (int i = 0; i < 2; ++i)
        videos.push_back(make_video(base / "media", "vid" + std::to_string(i), 28, 2, rng));

    // Mixture manifest + per-dataset record files + templates.
    nlohmann::json manifest_sets = nlohmann::json::array();
    nlohmann::json templates = nlohmann::json::array();
    for (const DatasetSeed& ds : kDatasets) {
        const std::string file =
            (base / "datasets" / (slug(ds.name) + ".jsonl")).string();
        std::vector<nlohmann::json> rows;
        for (const TaskRecord& r : synth_records(ds, images, videos, rng, 4))
            rows.push_back(record_json(r));
        write_jsonl(file, rows);
        manifest_sets.push_back({{"name", ds.name},
                                 {"type", task_type_name(ds.type)},
                                 {"path", file},
                                 {"pretrain_weight", ds.pretrain},
                                 {"finetune_weight", ds.finetune},
                                 {"templates", {slug(ds.name)}}});
        templates.push_back({{"id", slug(ds.name)},
                             {"type", task_type_name(ds.type)},
                             {"text", ds.prompt}});
    }
    out.manifest = (base / "manifest.json").string();
    {
        std::ofstream f(out.manifest);
        f << nlohmann::json{{"datasets", manifest_sets}}.dump(2) << "\n";
    }
    out.templates = (base / "templates.json").string();
    {
        std::ofstream f(out.templates);
        f << nlohmann::json{{"templates", templates}}.dump(2) << "\n";
    }

    out.presets = (base / "presets.json").string();
    save_presets(out.presets, builtin_presets());

    out.judge_prompt = (base / "judge_prompt.txt").string();
    {
        std::ofstream f(out.judge_prompt, std::ios::binary);
        f << golden_judge_prompt();
    }

    out.prompt_seeds = (base / "prompt_seeds.txt").string();
    {
        std::ofstream f(out.prompt_seeds);
        f << "Describe the image briefly.\n";
        f << "Write a relevant description to pair with the image.\n";
        f << "Describe the key elements in the image.\n";
    }

    // Memorization sets: distinct upper-case prompts, bigram-clean answers.
    {
        Rng mem_rng = rng.fork();
        auto m32 = memorization_set(base / "mem32", 32, mem_rng);
        out.mem32 = (base / "mem32" / "data.jsonl").string();
        save_instruction_samples(out.mem32, m32);
        auto m16 = memorization_set(base / "mem16", 16, mem_rng);
        out.mem16 = (base / "mem16" / "data.jsonl").string();
        save_instruction_samples(out.mem16, m16);
    }

    out.vqa_items_image = (base / "openvqa_image.jsonl").string();
    write_vqa_items(out.vqa_items_image, images, {}, rng);
    out.vqa_items_video = (base / "openvqa_video.jsonl").string();
    write_vqa_items(out.vqa_items_video, {}, videos, rng);

    // Score sheets: one clean, one with a 3-way tie, one blowing the tie
    // budget.
    {
        HumanEvalSheet clean;
        clean.annotator = "annotator_a";
        clean.models = {"model_a", "model_b", "model_c"};
        for (int q = 0; q < 8; ++q) {
            clean.questions.push_back("q" + std::to_string(q));
            const int s = 1 + static_cast<int>(q % 5);
            if (q < 3)
                clean.scores.push_back({s, s, (s % 5) + 1});  // one pair tie
            else
                clean.scores.push_back({(s % 5) + 1, ((s + 1) % 5) + 1, ((s + 2) % 5) + 1});
        }
        out.sheet_clean = (base / "sheets" / "clean.json").string();
        clean.save(out.sheet_clean);

        HumanEvalSheet tie3 = clean;
        tie3.annotator = "annotator_b";
        tie3.scores[0] = {4, 4, 4};
        out.sheet_tie3 = (base / "sheets" / "tie3.json").string();
        tie3.save(out.sheet_tie3);

        HumanEvalSheet tie11;
        tie11.annotator = "annotator_c";
        tie11.models = {"model_a", "model_b"};
        for (int q = 0; q < 12; ++q) {
            tie11.questions.push_back("q" + std::to_string(q));
            const int s = 1 + static_cast<int>(q % 5);
            if (q < 11)
                tie11.scores.push_back({s, s});
            else
                tie11.scores.push_back({2, 5});
        }
        out.sheet_tie11 = (base / "sheets" / "tie11.json").string();
        tie11.save(out.sheet_tie11);
    }

    // High-resolution stage data: a handful of samples at each input size.
    {
        fs::create_directories(base / "pipeline");
        std::vector<InstructionSample> s224, s420;
        for (int i = 0; i < 4; ++i) {
            InstructionSample s;
            s.media = make_image(base / "pipeline", "img224_" + std::to_string(i), 224, rng);
            s.prompt = "WHAT COLOR IS ITEM " + std::to_string(i) + "?";
            s.response = kCleanWords[i];
            s.dataset = "pipeline224";
            s224.push_back(std::move(s));
        }
        for (int i = 0; i < 2; ++i) {
            InstructionSample s;
            s.media = make_image(base / "pipeline", "img420_" + std::to_string(i), 420, rng);
            s.prompt = "WHAT COLOR IS ITEM " + std::to_string(i) + "?";
            s.response = kCleanWords[i];
            s.dataset = "pipeline420";
            s420.push_back(std::move(s));
        }
        out.pipeline224 = (base / "pipeline" / "train224.jsonl").string();
        save_instruction_samples(out.pipeline224, s224);
        out.pipeline420 = (base / "pipeline" / "train420.jsonl").string();
        save_instruction_samples(out.pipeline420, s420);
    }

    return out;
}

}  // namespace mmpt
