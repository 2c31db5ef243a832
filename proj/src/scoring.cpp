#include "synermed/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace synermed::scoring {

void LogProbSequence::validate() const {
    if (rows.size() != targets.size() || rows.size() != answer_mask.size()) {
        fail(ErrorKind::Data, "ShapeMismatch",
             "rows, targets, and answer_mask must have equal lengths");
    }
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.empty()) fail(ErrorKind::Data, "UnnormalizedRow", "empty log-probability row");
        if (targets[i] < 0 || targets[i] >= static_cast<int>(row.size())) {
            fail(ErrorKind::Data, "IndexOutOfRange",
                 "target index out of range at position " + std::to_string(i));
        }
        // log-sum-exp with max subtraction for stability.
        double mx = *std::max_element(row.begin(), row.end());
        double acc = 0.0;
        for (double v : row) acc += std::exp(v - mx);
        double lse = mx + std::log(acc);
        if (!std::isfinite(lse) || std::abs(lse) > 1e-6) {
            fail(ErrorKind::Data, "UnnormalizedRow",
                 "row " + std::to_string(i) + " is not a normalized distribution (log-sum-exp = " +
                     std::to_string(lse) + ")");
        }
    }
}

NtpLoss masked_ntp_loss(const LogProbSequence& seq) {
    seq.validate();
    NtpLoss loss;
    for (size_t i = 0; i < seq.rows.size(); ++i) {
        if (!seq.answer_mask[i]) continue;
        loss.sum -= seq.rows[i][static_cast<size_t>(seq.targets[i])];
        ++loss.masked_count;
    }
    if (loss.masked_count == 0) {
        fail(ErrorKind::Data, "EmptyMask", "masked NTP loss needs at least one masked position");
    }
    loss.mean_per_token = loss.sum / loss.masked_count;
    return loss;
}

char normalize_answer(const std::string& raw) {
    for (char c : raw) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
    }
    return '\0';
}

TaskAccuracyReport score_answers(const std::vector<UnderstandingInstance>& instances,
                                 const std::map<std::string, std::string>& predictions) {
    std::map<std::string, const UnderstandingInstance*> by_id;
    for (const auto& inst : instances) by_id[inst.instance_id] = &inst;
    for (const auto& [id, answer] : predictions) {
        if (by_id.find(id) == by_id.end()) {
            fail(ErrorKind::Data, "UnknownInstanceId", "prediction for unknown instance: " + id);
        }
    }

    TaskAccuracyReport report;
    for (const auto& inst : instances) {
        TaskScore& score = report.tasks[inst.task];
        ++score.n;
        auto it = predictions.find(inst.instance_id);
        if (it == predictions.end()) {
            ++score.missing;
            continue;
        }
        if (normalize_answer(it->second) == inst.answer_letter) ++score.correct;
    }
    double acc_sum = 0.0;
    for (const auto& [task, score] : report.tasks) {
        acc_sum += score.accuracy();
        report.missing_total += score.missing;
    }
    report.overall_accuracy = report.tasks.empty() ? 0.0 : acc_sum / report.tasks.size();
    return report;
}

std::string TaskAccuracyReport::to_json(int indent) const {
    nlohmann::ordered_json j;
    j["tasks"] = nlohmann::ordered_json::object();
    for (const auto& [task, score] : tasks) {
        nlohmann::ordered_json t;
        t["n"] = score.n;
        t["correct"] = score.correct;
        t["missing"] = score.missing;
        t["accuracy"] = score.accuracy();
        j["tasks"][domain::task_token(task)] = std::move(t);
    }
    j["overall_accuracy"] = overall_accuracy;
    j["missing_total"] = missing_total;
    return j.dump(indent);
}

std::map<std::string, std::string> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open predictions " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            out[j.at("instance_id").get<std::string>()] = j.at("answer").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Data, "SchemaError",
                 path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace synermed::scoring
