#include "mmpt/humaneval.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"

namespace mmpt {

HumanEvalSheet HumanEvalSheet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open score sheet '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
        HumanEvalSheet s;
        s.annotator = j.at("annotator").get<std::string>();
        s.models = j.at("models").get<std::vector<std::string>>();
        s.questions = j.at("questions").get<std::vector<std::string>>();
        s.scores = j.at("scores").get<std::vector<std::vector<int>>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("score sheet '" + path + "': " + e.what());
    }
}

void HumanEvalSheet::save(const std::string& path) const {
    nlohmann::json j{{"annotator", annotator},
                     {"models", models},
                     {"questions", questions},
                     {"scores", scores}};
    std::ofstream out(path);
    if (!out) throw DataError("cannot write score sheet '" + path + "'");
    out << j.dump(2) << "\n";
}

SheetReport validate_human_sheet(const HumanEvalSheet& sheet) {
    SheetReport report;
    const size_t n_models = sheet.models.size();

    if (sheet.scores.size() != sheet.questions.size()) {
        report.violations.push_back(
            {"shape", "sheet",
             "score rows (" + std::to_string(sheet.scores.size()) + ") do not match questions (" +
                 std::to_string(sheet.questions.size()) + ")"});
        return report;
    }

    std::vector<double> sums(n_models, 0.0);
    for (size_t q = 0; q < sheet.scores.size(); ++q) {
        const auto& row = sheet.scores[q];
        const std::string& qid = sheet.questions[q];
        if (row.size() != n_models) {
            report.violations.push_back(
                {"shape", qid,
                 "row has " + std::to_string(row.size()) + " scores for " +
                     std::to_string(n_models) + " models"});
            continue;
        }
        // Group models by score to spot ties wider than pairs.
        std::vector<std::vector<size_t>> by_score(6);
        for (size_t m = 0; m < n_models; ++m) {
            const int s = row[m];
            if (s < 1 || s > 5) {
                report.violations.push_back({"score-range", qid + "/" + sheet.models[m],
                                             "score " + std::to_string(s) +
                                                 " outside 1..5"});
                continue;
            }
            sums[m] += s;
            by_score[static_cast<size_t>(s)].push_back(m);
        }
        for (int s = 1; s <= 5; ++s) {
            const auto& group = by_score[static_cast<size_t>(s)];
            const size_t k = group.size();
            if (k < 2) continue;
            report.tie_count += static_cast<int>(k * (k - 1) / 2);
            if (k > 2) {
                std::ostringstream who;
                for (size_t i = 0; i < k; ++i) {
                    if (i) who << ", ";
                    who << sheet.models[group[i]];
                }
                report.violations.push_back(
                    {"tie-width", qid,
                     std::to_string(k) + " models share score " + std::to_string(s) + " (" +
                         who.str() + "); at most 2 may be equal"});
            }
        }
    }

    if (report.tie_count > 10) {
        report.violations.push_back(
            {"tie-budget", sheet.annotator,
             std::to_string(report.tie_count) + " ties exceed the budget of 10"});
    }

    const double n_questions = static_cast<double>(sheet.questions.size());
    for (size_t m = 0; m < n_models; ++m)
        report.mean_scores[sheet.models[m]] =
            n_questions > 0 ? sums[m] / n_questions : 0.0;
    return report;
}

}  // namespace mmpt
