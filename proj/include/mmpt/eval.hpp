#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmpt/client.hpp"
#include "mmpt/image.hpp"

namespace mmpt {

// Category vocabularies for the two benchmark flavors.
const std::vector<std::string>& image_vqa_categories();
const std::vector<std::string>& video_vqa_categories();
bool is_known_category(const std::string& category, bool video);

struct OpenVQAItem {
    std::string id;
    std::string media;
    std::string question;
    std::string answer;  // ground truth
    std::string category;
};

// Newline-delimited JSON, one item per line. Validates non-empty ground
// truth and category membership (video items use the video vocabulary).
std::vector<OpenVQAItem> load_vqa_items(const std::string& path);

// id -> prediction text, newline-delimited JSON {"id", "prediction"}.
std::vector<std::pair<std::string, std::string>> load_predictions(const std::string& path);

// The referee prompt, substituted verbatim.
std::string build_judge_prompt(const std::string& question, const std::string& prediction,
                               const std::string& ground_truth);

enum class Verdict { kYes, kNo, kError };
std::string verdict_name(Verdict v);

// Leading Yes/No of the reply, case-insensitive, ignoring leading
// whitespace and quotes; anything else is kError.
Verdict parse_verdict(const std::string& reply);

struct JudgeVerdict {
    std::string item_id;
    std::string prediction;
    Verdict verdict = Verdict::kError;
    std::string source;  // "remote" or "stub"
    std::string raw;     // judge reply as received
};

class Judge {
  public:
    virtual ~Judge() = default;
    virtual JudgeVerdict judge(const OpenVQAItem& item, const std::string& prediction) = 0;
};

// Lowercases and strips punctuation to spaces.
std::string normalize_answer(const std::string& s);
// Whole-word containment of the normalized ground truth in the normalized
// prediction.
bool stub_answer_match(const std::string& ground_truth, const std::string& prediction);

// Deterministic offline referee built on stub_answer_match.
class StubJudge : public Judge {
  public:
    JudgeVerdict judge(const OpenVQAItem& item, const std::string& prediction) override;
};

// Sends the judge prompt through a chat client and parses the reply.
// Unparseable replies come back as kError verdicts carrying the raw text.
class RemoteJudge : public Judge {
  public:
    explicit RemoteJudge(ChatClient& client);
    JudgeVerdict judge(const OpenVQAItem& item, const std::string& prediction) override;

  private:
    ChatClient& client_;
};

void save_verdicts(const std::string& path, const std::vector<JudgeVerdict>& verdicts);
std::vector<JudgeVerdict> load_verdicts(const std::string& path);

struct CategoryCount {
    int correct = 0;
    int total = 0;
};

struct CategoryReport {
    std::vector<std::pair<std::string, CategoryCount>> categories;
    int correct_total = 0;
    int grand_total = 0;
    double overall = 0.0;  // percentage, rounded to two decimals
    int error_verdicts = 0;

    std::string to_table() const;
    std::string to_json() const;
};

// Joins verdicts to items and folds per-category counts. Error verdicts are
// excluded from the totals and surface in error_verdicts. A verdict for an
// unknown item or a second verdict for the same item raises DataError.
CategoryReport aggregate(const std::vector<OpenVQAItem>& items,
                         const std::vector<JudgeVerdict>& verdicts);

double round2(double x);

// Zero-pads `pixels` on all four sides, then pads symmetrically up to the
// next multiple of the patch size so the result stays encodable.
ImageTensor pad_image(const ImageTensor& img, int pixels);

}  // namespace mmpt
