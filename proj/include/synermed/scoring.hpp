#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "synermed/domain.hpp"

namespace synermed::scoring {

using domain::Task;
using domain::UnderstandingInstance;

/// Per-position log-probability rows over a vocabulary, with the target token
/// index and the answer mask. Each row must be a normalized distribution
/// (log-sum-exp within 1e-6 of zero).
struct LogProbSequence {
    std::vector<std::vector<double>> rows;
    std::vector<int> targets;
    std::vector<bool> answer_mask;

    void validate() const;
};

struct NtpLoss {
    double sum = 0.0;             // primary: the sum over answer tokens
    double mean_per_token = 0.0;  // sum / masked count
    int masked_count = 0;
};

/// Masked next-token-prediction loss: -sum of target log-probabilities over
/// masked positions. Errors: EmptyMask, UnnormalizedRow.
NtpLoss masked_ntp_loss(const LogProbSequence& seq);

struct TaskScore {
    int n = 0;
    int correct = 0;
    int missing = 0;  // instances with no prediction, counted incorrect

    double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / n; }
};

struct TaskAccuracyReport {
    std::map<Task, TaskScore> tasks;
    double overall_accuracy = 0.0;  // unweighted mean over tasks present
    int missing_total = 0;

    std::string to_json(int indent = 2) const;
};

/// Normalizes a raw prediction to its answer letter: strip whitespace,
/// case-fold, first alphabetic character wins. Returns '\0' when no letter
/// is present.
char normalize_answer(const std::string& raw);

/// Exact-match scoring of predictions (instance_id -> raw answer string).
/// Errors: UnknownInstanceId for predictions naming no instance.
TaskAccuracyReport score_answers(const std::vector<UnderstandingInstance>& instances,
                                 const std::map<std::string, std::string>& predictions);

/// Predictions file: JSONL of {"instance_id", "answer"}.
std::map<std::string, std::string> read_predictions(const std::filesystem::path& path);

}  // namespace synermed::scoring
