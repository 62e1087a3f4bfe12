#include "mmpt/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"
#include "mmpt/log.hpp"

namespace mmpt {

const std::vector<std::string>& image_vqa_categories() {
    static const std::vector<std::string> cats{"OCR",   "Counting", "Reasoning", "Place",
                                              "Color", "Spatial",  "Action",    "Others"};
    return cats;
}

const std::vector<std::string>& video_vqa_categories() {
    static const std::vector<std::string> cats{"Action (Y/N)", "Others"};
    return cats;
}

bool is_known_category(const std::string& category, bool video) {
    const auto& cats = video ? video_vqa_categories() : image_vqa_categories();
    return std::find(cats.begin(), cats.end(), category) != cats.end();
}

std::vector<OpenVQAItem> load_vqa_items(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open benchmark file '" + path + "'");
    std::vector<OpenVQAItem> items;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            OpenVQAItem it;
            it.id = j.at("id").get<std::string>();
            it.media = j.at("media").get<std::string>();
            it.question = j.at("question").get<std::string>();
            it.answer = j.at("answer").get<std::string>();
            it.category = j.at("category").get<std::string>();
            if (it.answer.empty())
                throw DataError("line " + std::to_string(lineno) + ": empty ground truth");
            const bool video = is_video_path(it.media);
            if (!is_known_category(it.category, video))
                throw DataError("line " + std::to_string(lineno) + ": unknown category '" +
                                it.category + "' for " + (video ? "video" : "image") +
                                " item");
            items.push_back(std::move(it));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("benchmark file '" + path + "' line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return items;
}

std::vector<std::pair<std::string, std::string>> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open prediction file '" + path + "'");
    std::vector<std::pair<std::string, std::string>> preds;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            preds.emplace_back(j.at("id").get<std::string>(),
                               j.at("prediction").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("prediction file '" + path + "' line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return preds;
}

std::string build_judge_prompt(const std::string& question, const std::string& prediction,
                               const std::string& ground_truth) {
    if (question.empty() || prediction.empty() || ground_truth.empty())
        throw DataError("build_judge_prompt: all three fields must be non-empty");
    return "Given the question \"" + question + "\", does the answer \"" + prediction +
           "\" imply the answer \"" + ground_truth + "\"? Answer with Yes or No.";
}

std::string verdict_name(Verdict v) {
    switch (v) {
        case Verdict::kYes: return "yes";
        case Verdict::kNo: return "no";
        case Verdict::kError: return "error";
    }
    return "error";
}

namespace {

Verdict verdict_from_name(const std::string& s) {
    if (s == "yes") return Verdict::kYes;
    if (s == "no") return Verdict::kNo;
    return Verdict::kError;
}

}  // namespace

Verdict parse_verdict(const std::string& reply) {
    size_t i = 0;
    while (i < reply.size() &&
           (std::isspace(static_cast<unsigned char>(reply[i])) || reply[i] == '"' ||
            reply[i] == '\''))
        ++i;
    auto word_is = [&](const char* w, size_t n) {
        if (reply.size() - i < n) return false;
        for (size_t k = 0; k < n; ++k)
            if (std::tolower(static_cast<unsigned char>(reply[i + k])) != w[k]) return false;
        // Must end at a word boundary ("Yesterday" is not a yes).
        return i + n >= reply.size() ||
               !std::isalpha(static_cast<unsigned char>(reply[i + n]));
    };
    if (word_is("yes", 3)) return Verdict::kYes;
    if (word_is("no", 2)) return Verdict::kNo;
    return Verdict::kError;
}

std::string normalize_answer(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            out.push_back(static_cast<char>(std::tolower(u)));
        else
            out.push_back(' ');
    }
    return out;
}

bool stub_answer_match(const std::string& ground_truth, const std::string& prediction) {
    std::istringstream gs(normalize_answer(ground_truth));
    std::istringstream ps(normalize_answer(prediction));
    std::vector<std::string> gt_words, pred_words;
    for (std::string w; gs >> w;) gt_words.push_back(w);
    for (std::string w; ps >> w;) pred_words.push_back(w);
    if (gt_words.empty() || gt_words.size() > pred_words.size()) return false;
    for (size_t start = 0; start + gt_words.size() <= pred_words.size(); ++start) {
        if (std::equal(gt_words.begin(), gt_words.end(), pred_words.begin() + start))
            return true;
    }
    return false;
}

JudgeVerdict StubJudge::judge(const OpenVQAItem& item, const std::string& prediction) {
    JudgeVerdict v;
    v.item_id = item.id;
    v.prediction = prediction;
    v.source = "stub";
    v.verdict = stub_answer_match(item.answer, prediction) ? Verdict::kYes : Verdict::kNo;
    v.raw = verdict_name(v.verdict);
    return v;
}

RemoteJudge::RemoteJudge(ChatClient& client) : client_(client) {}

JudgeVerdict RemoteJudge::judge(const OpenVQAItem& item, const std::string& prediction) {
    JudgeVerdict v;
    v.item_id = item.id;
    v.prediction = prediction;
    v.source = "remote";
    v.raw = client_.complete(build_judge_prompt(item.question, prediction, item.answer));
    v.verdict = parse_verdict(v.raw);
    if (v.verdict == Verdict::kError)
        log_warn("judge reply for item '" + item.id + "' is not a Yes/No answer");
    return v;
}

void save_verdicts(const std::string& path, const std::vector<JudgeVerdict>& verdicts) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write verdict file '" + path + "'");
    for (const JudgeVerdict& v : verdicts) {
        nlohmann::json j{{"id", v.item_id},
                         {"prediction", v.prediction},
                         {"verdict", verdict_name(v.verdict)},
                         {"source", v.source},
                         {"raw", v.raw}};
        // Predictions are raw model bytes and need not be valid UTF-8.
        out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
    }
}

std::vector<JudgeVerdict> load_verdicts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open verdict file '" + path + "'");
    std::vector<JudgeVerdict> verdicts;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            JudgeVerdict v;
            v.item_id = j.at("id").get<std::string>();
            v.prediction = j.at("prediction").get<std::string>();
            v.verdict = verdict_from_name(j.at("verdict").get<std::string>());
            v.source = j.at("source").get<std::string>();
            v.raw = j.at("raw").get<std::string>();
            verdicts.push_back(std::move(v));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("verdict file '" + path + "' line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return verdicts;
}

double round2(double x) { return std::llround(x * 100.0) / 100.0; }

CategoryReport aggregate(const std::vector<OpenVQAItem>& items,
                         const std::vector<JudgeVerdict>& verdicts) {
    std::map<std::string, const OpenVQAItem*> by_id;
    bool any_video = false;
    for (const OpenVQAItem& it : items) {
        if (!by_id.emplace(it.id, &it).second)
            throw DataError("aggregate: duplicate item id '" + it.id + "'");
        any_video = any_video || is_video_path(it.media);
    }
    const std::vector<std::string>& order =
        any_video ? video_vqa_categories() : image_vqa_categories();

    std::map<std::string, CategoryCount> counts;
    std::set<std::string> seen;
    CategoryReport report;
    for (const JudgeVerdict& v : verdicts) {
        auto it = by_id.find(v.item_id);
        if (it == by_id.end())
            throw DataError("aggregate: verdict for unknown item '" + v.item_id + "'");
        if (!seen.insert(v.item_id).second)
            throw DataError("aggregate: duplicate verdict for item '" + v.item_id + "'");
        if (v.verdict == Verdict::kError) {
            ++report.error_verdicts;
            continue;
        }
        CategoryCount& c = counts[it->second->category];
        ++c.total;
        if (v.verdict == Verdict::kYes) ++c.correct;
    }

    for (const std::string& cat : order) {
        auto it = counts.find(cat);
        if (it == counts.end()) continue;
        report.categories.emplace_back(cat, it->second);
        report.correct_total += it->second.correct;
        report.grand_total += it->second.total;
    }
    report.overall = report.grand_total == 0
                         ? 0.0
                         : round2(100.0 * report.correct_total / report.grand_total);
    if (report.error_verdicts > 0)
        log_warn("aggregate: excluded " + std::to_string(report.error_verdicts) +
                 " unparseable verdict(s)");
    return report;
}

std::string CategoryReport::to_table() const {
    std::ostringstream head, row;
    for (const auto& [name, c] : categories) {
        const std::string cell = std::to_string(c.correct) + "/" + std::to_string(c.total);
        const auto width = static_cast<int>(std::max(name.size(), cell.size()) + 2);
        head << std::left << std::setw(width) << name;
        row << std::left << std::setw(width) << cell;
    }
    head << "Overall";
    row << std::fixed << std::setprecision(2) << overall;
    return head.str() + "\n" + row.str() + "\n";
}

std::string CategoryReport::to_json() const {
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& [name, c] : categories)
        cats.push_back({{"category", name}, {"correct", c.correct}, {"total", c.total}});
    nlohmann::json j{{"categories", cats},
                     {"correct", correct_total},
                     {"total", grand_total},
                     {"overall", overall},
                     {"error_verdicts", error_verdicts}};
    return j.dump(2);
}

ImageTensor pad_image(const ImageTensor& img, int pixels) {
    if (pixels < 0) throw ConfigError("pad_image: negative padding");
    int h = img.height + 2 * pixels;
    int w = img.width + 2 * pixels;
    const int extra_h = (kPatchSize - h % kPatchSize) % kPatchSize;
    const int extra_w = (kPatchSize - w % kPatchSize) % kPatchSize;
    const int top = pixels + extra_h / 2;
    const int left = pixels + extra_w / 2;
    h += extra_h;
    w += extra_w;

    ImageTensor out;
    out.height = h;
    out.width = w;
    out.data.assign(static_cast<size_t>(3) * h * w, 0.0f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, y + top, x + left) = img.at(c, y, x);
    return out;
}

}  // namespace mmpt
