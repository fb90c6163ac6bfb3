#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lungnet {

/// k×k counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::int64_t> counts;
    std::vector<std::string> class_names;

    std::int64_t operator()(std::size_t truth, std::size_t predicted) const { return counts[truth * k + predicted]; }
    std::int64_t& operator()(std::size_t truth, std::size_t predicted) { return counts[truth * k + predicted]; }
    std::int64_t row_sum(std::size_t c) const;
    std::int64_t col_sum(std::size_t c) const;
    std::int64_t total() const;
    std::int64_t trace() const;
};

// Class names default to "class0".."class{k-1}" when empty. Throws InputError
// on length mismatch or out-of-range labels.
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                                 std::vector<std::string> class_names = {});

// Builds a matrix from explicit rows.
ConfusionMatrix confusion_matrix_from_counts(const std::vector<std::vector<std::int64_t>>& rows,
                                             std::vector<std::string> class_names = {});

struct ClassMetrics {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
    // Set when a denominator was zero and the rate was defined as 0.
    bool zero_division = false;

    bool operator==(const ClassMetrics&) const = default;
};

struct AverageMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    bool operator==(const AverageMetrics&) const = default;
};

struct ClassReport {
    std::vector<ClassMetrics> classes;
    double accuracy = 0.0;
    AverageMetrics macro;
    AverageMetrics weighted;
    std::int64_t total = 0;

    bool operator==(const ClassReport&) const = default;
};

// One-vs-rest precision/recall/F1 per class; zero denominators give 0.
ClassReport classification_report(const ConfusionMatrix& cm);

enum class ReportFormat { text, csv, json };

// Throws InputError for anything but text, csv, json.
ReportFormat parse_report_format(std::string_view text);

// text: fixed-width table, 4 decimal places. csv/json: full precision.
std::string render_report(const ClassReport& report, ReportFormat format);
ClassReport parse_report_json(std::string_view json_text);

// Header row of predicted class names, then one row per true class.
std::string render_confusion_csv(const ConfusionMatrix& cm);
// Inverse of render_confusion_csv. Throws FormatError.
ConfusionMatrix parse_confusion_csv(std::string_view csv);

}  // namespace lungnet
