#include "mmpt/mixer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"
#include "mmpt/log.hpp"

namespace mmpt {

namespace {

using nlohmann::json;

const std::pair<const char*, TaskType> kTaskNames[] = {
    {"image_text_pair", TaskType::kImageTextPair},
    {"image_caption", TaskType::kImageCaption},
    {"vqa", TaskType::kVqa},
    {"classification", TaskType::kClassification},
    {"video_vqa", TaskType::kVideoVqa},
    {"video_caption", TaskType::kVideoCaption},
    {"dialog", TaskType::kDialog},
    {"text_instructions", TaskType::kTextInstructions},
};

json parse_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

}  // namespace

std::string task_type_name(TaskType t) {
    for (const auto& [name, type] : kTaskNames) {
        if (type == t) return name;
    }
    throw ConfigError("unknown task type");
}

TaskType task_type_from(const std::string& s) {
    for (const auto& [name, type] : kTaskNames) {
        if (s == name) return type;
    }
    throw ConfigError("unknown task type '" + s + "'");
}

bool task_needs_media(TaskType t) {
    return t != TaskType::kDialog && t != TaskType::kTextInstructions;
}

TaskManifest TaskManifest::load(const std::string& path) {
    const json root = parse_json_file(path);
    if (!root.contains("datasets") || !root["datasets"].is_array()) {
        throw DataError("manifest '" + path + "': missing datasets array");
    }
    TaskManifest m;
    std::set<std::string> seen;
    for (const json& d : root["datasets"]) {
        DatasetEntry e;
        try {
            e.name = d.at("name").get<std::string>();
            e.type = task_type_from(d.at("type").get<std::string>());
            e.path = d.at("path").get<std::string>();
            e.pretrain_weight = d.at("pretrain_weight").get<double>();
            e.finetune_weight = d.at("finetune_weight").get<double>();
            for (const json& t : d.at("templates")) {
                e.template_ids.push_back(t.get<std::string>());
            }
        } catch (const json::exception& ex) {
            throw DataError("manifest '" + path + "': " + ex.what());
        }
        if (e.pretrain_weight < 0.0 || e.finetune_weight < 0.0) {
            throw DataError("manifest '" + path + "': negative weight for " + e.name);
        }
        if (e.template_ids.empty()) {
            throw DataError("manifest '" + path + "': no templates for " + e.name);
        }
        if (!seen.insert(e.name).second) {
            throw DataError("manifest '" + path + "': duplicate dataset " + e.name);
        }
        m.datasets.push_back(std::move(e));
    }
    if (m.datasets.empty()) throw DataError("manifest '" + path + "': no datasets");
    return m;
}

TemplateSet TemplateSet::load(const std::string& path) {
    const json root = parse_json_file(path);
    if (!root.contains("templates") || !root["templates"].is_array()) {
        throw DataError("templates '" + path + "': missing templates array");
    }
    TemplateSet set;
    for (const json& t : root["templates"]) {
        PromptTemplate p;
        try {
            p.id = t.at("id").get<std::string>();
            p.type = task_type_from(t.at("type").get<std::string>());
            p.text = t.at("text").get<std::string>();
        } catch (const json::exception& ex) {
            throw DataError("templates '" + path + "': " + ex.what());
        }
        set.templates.push_back(std::move(p));
    }
    return set;
}

const PromptTemplate& TemplateSet::at(const std::string& id) const {
    for (const PromptTemplate& t : templates) {
        if (t.id == id) return t;
    }
    throw ConfigError("unknown prompt template '" + id + "'");
}

std::vector<TaskRecord> load_records(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open records '" + path + "'");
    std::vector<TaskRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
        TaskRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            if (j.contains("media") && !j["media"].is_null()) {
                r.media = j["media"].get<std::string>();
            }
            if (j.contains("fields")) {
                for (const auto& [k, v] : j["fields"].items()) {
                    r.fields[k] = v.get<std::string>();
                }
            }
            if (j.contains("response")) r.response = j["response"].get<std::string>();
            if (j.contains("turns")) {
                for (const json& t : j["turns"]) {
                    r.turns.push_back({t.at("user").get<std::string>(),
                                       t.at("assistant").get<std::string>()});
                }
            }
        } catch (const json::exception& e) {
            throw DataError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
        if (r.response.empty() && r.turns.empty()) {
            throw DataError("'" + path + "' line " + std::to_string(lineno) +
                            ": record has neither response nor turns");
        }
        out.push_back(std::move(r));
    }
    if (out.empty()) throw DataError("'" + path + "': no records");
    return out;
}

namespace {

const char* kPlaceholders[] = {"[QUESTION]", "[HYPOTHESIS]", "[OPTIONS]",
                               "[MEME]", "[DIALOG]", "[INSTRUCTION]"};

std::string question_with_mark(std::string q) {
    size_t end = q.size();
    while (end > 0 && std::isspace(static_cast<unsigned char>(q[end - 1]))) --end;
    if (end == 0 || q[end - 1] != '?') {
        q.insert(end, "?");
    }
    return q;
}

}  // namespace

std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& fields) {
    std::string out = tmpl.text;
    for (const char* ph : kPlaceholders) {
        const std::string placeholder = ph;
        size_t pos = out.find(placeholder);
        if (pos == std::string::npos) continue;
        // "[QUESTION]" -> field key "question".
        std::string key = placeholder.substr(1, placeholder.size() - 2);
        std::transform(key.begin(), key.end(), key.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        auto it = fields.find(key);
        if (it == fields.end()) {
            throw DataError("template '" + tmpl.id + "': record provides no value for " +
                            placeholder);
        }
        std::string value = it->second;
        if (placeholder == "[QUESTION]") value = question_with_mark(value);
        while (pos != std::string::npos) {
            out.replace(pos, placeholder.size(), value);
            pos = out.find(placeholder, pos + value.size());
        }
    }
    return out;
}

std::string render_dialog_history(const std::vector<RecordTurn>& turns, size_t round) {
    if (round >= turns.size()) {
        throw DataError("dialog round " + std::to_string(round) + " out of range");
    }
    std::ostringstream os;
    for (size_t i = 0; i < round; ++i) {
        os << "User: " << turns[i].user << "\n";
        os << "Assistant: " << turns[i].assistant << "\n";
    }
    os << "User: " << turns[round].user << "\n";
    os << "Assistant:";
    return os.str();
}

MixtureSpec MixtureSpec::build(const TaskManifest& manifest, MixStage stage) {
    MixtureSpec spec;
    double sum = 0.0;
    for (const DatasetEntry& d : manifest.datasets) {
        const double w = stage == MixStage::kPretrain ? d.pretrain_weight : d.finetune_weight;
        if (w <= 0.0) continue;
        spec.entries.push_back({d.name, w});
        sum += w;
    }
    if (spec.entries.empty() || sum <= 0.0) {
        throw ConfigError("mixture: every dataset has zero weight for this stage");
    }
    // Published ratio tables do not always sum to exactly 100; normalize.
    for (auto& e : spec.entries) e.weight /= sum;
    return spec;
}

size_t weighted_sample(const MixtureSpec& spec, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < spec.entries.size(); ++i) {
        acc += spec.entries[i].weight;
        if (u < acc) return i;
    }
    return spec.entries.size() - 1;
}

MixtureSampler::MixtureSampler(const TaskManifest& manifest, const TemplateSet& templates,
                               MixStage stage)
    : templates_(templates), spec_(MixtureSpec::build(manifest, stage)) {
    for (const MixtureSpec::Entry& e : spec_.entries) {
        const DatasetEntry* entry = nullptr;
        for (const DatasetEntry& d : manifest.datasets) {
            if (d.name == e.name) entry = &d;
        }
        LoadedDataset ds;
        ds.entry = *entry;
        ds.records = load_records(entry->path);
        for (const std::string& id : entry->template_ids) {
            (void)templates.at(id);  // fail fast on unknown template ids
        }
        for (const TaskRecord& r : ds.records) {
            if (task_needs_media(entry->type) && r.media.empty()) {
                throw DataError("dataset " + entry->name + ": record " + r.id +
                                " needs media for task type " + task_type_name(entry->type));
            }
            if (entry->type == TaskType::kDialog && r.turns.empty()) {
                throw DataError("dataset " + entry->name + ": record " + r.id +
                                " has no dialog turns");
            }
        }
        datasets_.push_back(std::move(ds));
    }
}

InstructionSample MixtureSampler::draw(Rng& rng) const {
    const size_t di = weighted_sample(spec_, rng);
    const LoadedDataset& ds = datasets_[di];
    const TaskRecord& rec = ds.records[rng.below(ds.records.size())];
    const std::string& tmpl_id =
        ds.entry.template_ids[ds.entry.template_ids.size() == 1
                                  ? 0
                                  : rng.below(ds.entry.template_ids.size())];
    const PromptTemplate& tmpl = templates_.at(tmpl_id);

    InstructionSample s;
    s.media = rec.media;
    s.dataset = ds.entry.name;
    if (ds.entry.type == TaskType::kDialog) {
        const size_t round = rec.turns.size() == 1 ? 0 : rng.below(rec.turns.size());
        std::map<std::string, std::string> fields = rec.fields;
        fields["dialog"] = render_dialog_history(rec.turns, round);
        s.prompt = render_prompt(tmpl, fields);
        s.response = rec.turns[round].assistant;
    } else {
        s.prompt = render_prompt(tmpl, rec.fields);
        s.response = rec.response;
    }
    if (s.response.empty()) {
        throw DataError("dataset " + ds.entry.name + ": record " + rec.id +
                        " yields an empty response");
    }
    return s;
}

TokenCounts count_tokens(const std::vector<InstructionSample>& samples,
                         const ByteTokenizer& tok) {
    TokenCounts counts;
    for (const InstructionSample& s : samples) {
        const int64_t n = static_cast<int64_t>(tok.encode(s.prompt).size() +
                                               tok.encode(s.response).size());
        counts.per_dataset[s.dataset] += n;
        counts.total += n;
    }
    return counts;
}

std::string build_meta_prompt(const std::vector<std::string>& seeds) {
    if (seeds.size() < 3) {
        throw ConfigError("prompt expansion needs at least 3 seed prompts, got " +
                          std::to_string(seeds.size()));
    }
    std::ostringstream os;
    os << "Here are some instructions that define a visual-language task. "
          "Continue to write 15 instructions with the same meaning: ";
    for (size_t i = 0; i < seeds.size(); ++i) {
        os << (i + 1) << ") " << seeds[i] << ";";
        if (i + 1 < seeds.size()) os << " ";
    }
    return os.str();
}

std::vector<std::string> parse_numbered_list(const std::string& reply) {
    // Items start at "<number>)" or "<number>." and run to the next marker.
    struct Marker {
        size_t start, text_start;
    };
    std::vector<Marker> markers;
    for (size_t i = 0; i < reply.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
        if (i > 0 && std::isalnum(static_cast<unsigned char>(reply[i - 1]))) continue;
        size_t j = i;
        while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
        if (j < reply.size() && (reply[j] == ')' || reply[j] == '.')) {
            markers.push_back({i, j + 1});
            i = j;
        }
    }
    std::vector<std::string> items;
    for (size_t m = 0; m < markers.size(); ++m) {
        const size_t begin = markers[m].text_start;
        const size_t end = m + 1 < markers.size() ? markers[m + 1].start : reply.size();
        std::string item = reply.substr(begin, end - begin);
        // Trim whitespace and the list separators around each item.
        size_t a = 0, b = item.size();
        while (a < b && std::isspace(static_cast<unsigned char>(item[a]))) ++a;
        while (b > a && (std::isspace(static_cast<unsigned char>(item[b - 1])) ||
                         item[b - 1] == ';' || item[b - 1] == ','))
            --b;
        if (b > a) items.push_back(item.substr(a, b - a));
    }
    if (items.empty()) {
        throw ParseError("prompt expansion: reply contains no numbered list", reply);
    }
    return items;
}

namespace {

std::string fold_case(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

std::vector<std::string> expand_prompts(const std::vector<std::string>& seeds,
                                        ChatClient& client) {
    const std::string reply = client.complete(build_meta_prompt(seeds));
    const std::vector<std::string> items = parse_numbered_list(reply);

    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const std::string& s : seeds) {
        if (seen.insert(fold_case(s)).second) out.push_back(s);
    }
    for (const std::string& item : items) {
        if (seen.insert(fold_case(item)).second) out.push_back(item);
    }
    return out;
}

}  // namespace mmpt
