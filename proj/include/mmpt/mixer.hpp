#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmpt/client.hpp"
#include "mmpt/rng.hpp"
#include "mmpt/tokenizer.hpp"

namespace mmpt {

enum class TaskType {
    kImageTextPair,
    kImageCaption,
    kVqa,
    kClassification,
    kVideoVqa,
    kVideoCaption,
    kDialog,
    kTextInstructions,
};

std::string task_type_name(TaskType t);
TaskType task_type_from(const std::string& s);
bool task_needs_media(TaskType t);

struct DatasetEntry {
    std::string name;
    TaskType type = TaskType::kVqa;
    std::string path;
    double pretrain_weight = 0.0;
    double finetune_weight = 0.0;
    std::vector<std::string> template_ids;
};

struct TaskManifest {
    std::vector<DatasetEntry> datasets;
    static TaskManifest load(const std::string& path);
};

struct PromptTemplate {
    std::string id;
    TaskType type = TaskType::kVqa;
    std::string text;
};

struct TemplateSet {
    std::vector<PromptTemplate> templates;
    static TemplateSet load(const std::string& path);
    const PromptTemplate& at(const std::string& id) const;
};

struct RecordTurn {
    std::string user;
    std::string assistant;
};

// One line of a dataset file: substitution fields plus the target response,
// or dialog turns for dialog tasks.
struct TaskRecord {
    std::string id;
    std::string media;
    std::map<std::string, std::string> fields;
    std::string response;
    std::vector<RecordTurn> turns;
};

std::vector<TaskRecord> load_records(const std::string& path);

// Substitutes placeholders; [QUESTION] values get a "?" appended when they
// lack one. Unresolvable placeholders raise DataError naming the placeholder.
std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& fields);

// Formats dialog history for the [DIALOG] placeholder: complete prior rounds,
// the current user line, and a trailing "Assistant:" cue.
std::string render_dialog_history(const std::vector<RecordTurn>& turns, size_t round);

struct InstructionSample {
    std::string media;  // empty for text-only tasks
    std::string prompt;
    std::string response;
    std::string dataset;
};

enum class MixStage { kPretrain, kFinetune };

struct MixtureSpec {
    struct Entry {
        std::string name;
        double weight = 0.0;
    };
    std::vector<Entry> entries;  // weights normalized to sum 1
    static MixtureSpec build(const TaskManifest& manifest, MixStage stage);
};

size_t weighted_sample(const MixtureSpec& spec, Rng& rng);

// Draws instruction samples from the weighted dataset mixture, with
// replacement, rendering a prompt template each time.
class MixtureSampler {
  public:
    MixtureSampler(const TaskManifest& manifest, const TemplateSet& templates,
                   MixStage stage);

    InstructionSample draw(Rng& rng) const;
    const MixtureSpec& spec() const { return spec_; }

  private:
    struct LoadedDataset {
        DatasetEntry entry;
        std::vector<TaskRecord> records;
    };
    std::vector<LoadedDataset> datasets_;
    const TemplateSet& templates_;
    MixtureSpec spec_;
};

struct TokenCounts {
    std::map<std::string, int64_t> per_dataset;
    int64_t total = 0;
};

TokenCounts count_tokens(const std::vector<InstructionSample>& samples,
                         const ByteTokenizer& tok);

// Builds the instruction-expansion request around the seed prompts.
std::string build_meta_prompt(const std::vector<std::string>& seeds);

// Asks the client for paraphrases and merges them with the seeds,
// deduplicating case-insensitively. Seeds always survive.
std::vector<std::string> expand_prompts(const std::vector<std::string>& seeds,
                                        ChatClient& client);

// Parses a "1) ... 2) ..." numbered list; empty result raises ParseError.
std::vector<std::string> parse_numbered_list(const std::string& reply);

}  // namespace mmpt
