#pragma once

#include <map>
#include <string>
#include <vector>

namespace mmpt {

// One annotator's score grid: rows are questions, columns are models.
struct HumanEvalSheet {
    std::string annotator;
    std::vector<std::string> models;
    std::vector<std::string> questions;
    std::vector<std::vector<int>> scores;  // [question][model]

    static HumanEvalSheet load(const std::string& path);
    void save(const std::string& path) const;
};

struct SheetViolation {
    std::string rule;   // "score-range" | "tie-width" | "tie-budget" | "shape"
    std::string where;  // question/model coordinates
    std::string detail;
};

struct SheetReport {
    std::vector<SheetViolation> violations;
    // Pairs of models sharing a score on one question, summed over the sheet.
    int tie_count = 0;
    std::map<std::string, double> mean_scores;

    bool valid() const { return violations.empty(); }
};

// Checks the protocol rules: scores within 1..5, at most two models sharing a
// score per question, at most ten ties per annotator. Mean per-model scores
// are computed regardless of violations.
SheetReport validate_human_sheet(const HumanEvalSheet& sheet);

}  // namespace mmpt
