#include "lungnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "lungnet/errors.hpp"

namespace lungnet {

namespace {

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string pad_left(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char ch : s) {
        out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    }
    return out + "\"";
}

std::vector<std::string> csv_split(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                fields.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.emplace_back();
        } else {
            fields.back() += ch;
        }
    }
    if (quoted) {
        throw FormatError("unterminated quote in CSV line");
    }
    return fields;
}

double ratio(std::int64_t num, std::int64_t den, bool& zero_division) {
    if (den == 0) {
        zero_division = true;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::string> default_names(std::size_t k, std::vector<std::string> names) {
    if (names.empty()) {
        for (std::size_t c = 0; c < k; ++c) {
            names.push_back("class" + std::to_string(c));
        }
    }
    if (names.size() != k) {
        throw InputError(std::to_string(names.size()) + " class names for " + std::to_string(k) + " classes");
    }
    return names;
}

}  // namespace

std::int64_t ConfusionMatrix::row_sum(std::size_t c) const {
    std::int64_t s = 0;
    for (std::size_t j = 0; j < k; ++j) {
        s += (*this)(c, j);
    }
    return s;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t c) const {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < k; ++i) {
        s += (*this)(i, c);
    }
    return s;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t s = 0;
    for (auto v : counts) {
        s += v;
    }
    return s;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t s = 0;
    for (std::size_t c = 0; c < k; ++c) {
        s += (*this)(c, c);
    }
    return s;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t k,
                                 std::vector<std::string> class_names) {
    if (truth.size() != predicted.size()) {
        throw InputError("confusion_matrix: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(predicted.size()) + " predictions");
    }
    ConfusionMatrix cm{k, std::vector<std::int64_t>(k * k, 0), default_names(k, std::move(class_names))};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i];
        const int p = predicted[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
            throw InputError("confusion_matrix: label pair (" + std::to_string(t) + ", " + std::to_string(p) +
                             ") at index " + std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
        }
        ++cm(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

ConfusionMatrix confusion_matrix_from_counts(const std::vector<std::vector<std::int64_t>>& rows,
                                             std::vector<std::string> class_names) {
    const std::size_t k = rows.size();
    ConfusionMatrix cm{k, {}, default_names(k, std::move(class_names))};
    for (const auto& row : rows) {
        if (row.size() != k) {
            throw InputError("confusion matrix rows must have " + std::to_string(k) + " entries");
        }
        for (auto v : row) {
            if (v < 0) {
                throw InputError("confusion matrix counts must be non-negative");
            }
            cm.counts.push_back(v);
        }
    }
    return cm;
}

ClassReport classification_report(const ConfusionMatrix& cm) {
    ClassReport r;
    r.total = cm.total();
    bool ignored = false;
    r.accuracy = ratio(cm.trace(), r.total, ignored);
    for (std::size_t c = 0; c < cm.k; ++c) {
        ClassMetrics m;
        m.name = cm.class_names.at(c);
        m.support = cm.row_sum(c);
        const std::int64_t tp = cm(c, c);
        m.precision = ratio(tp, cm.col_sum(c), m.zero_division);
        m.recall = ratio(tp, m.support, m.zero_division);
        const double pr = m.precision + m.recall;
        m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
        if (pr == 0.0) {
            m.zero_division = true;
        }
        r.classes.push_back(std::move(m));
    }
    if (!r.classes.empty()) {
        const auto k = static_cast<double>(r.classes.size());
        for (const auto& m : r.classes) {
            r.macro.precision += m.precision;
            r.macro.recall += m.recall;
            r.macro.f1 += m.f1;
        }
        r.macro.precision /= k;
        r.macro.recall /= k;
        r.macro.f1 /= k;
        if (r.total > 0) {
            const auto total = static_cast<double>(r.total);
            for (const auto& m : r.classes) {
                const double w = static_cast<double>(m.support) / total;
                r.weighted.precision += w * m.precision;
                r.weighted.recall += w * m.recall;
                r.weighted.f1 += w * m.f1;
            }
        }
    }
    return r;
}

ReportFormat parse_report_format(std::string_view text) {
    if (text == "text") return ReportFormat::text;
    if (text == "csv") return ReportFormat::csv;
    if (text == "json") return ReportFormat::json;
    throw InputError("unknown report format '" + std::string(text) + "' (expected text, csv, or json)");
}

std::string render_report(const ClassReport& report, ReportFormat format) {
    std::ostringstream out;
    switch (format) {
        case ReportFormat::text: {
            std::size_t label_width = 12;  // "weighted avg"
            for (const auto& m : report.classes) {
                label_width = std::max(label_width, m.name.size());
            }
            constexpr std::size_t kCol = 10;
            out << std::string(label_width, ' ') << pad_left("precision", kCol) << pad_left("recall", kCol)
                << pad_left("f1-score", kCol) << pad_left("support", kCol) << "\n\n";
            for (const auto& m : report.classes) {
                out << pad_left(m.name, label_width) << pad_left(fixed4(m.precision), kCol)
                    << pad_left(fixed4(m.recall), kCol) << pad_left(fixed4(m.f1), kCol)
                    << pad_left(std::to_string(m.support), kCol) << '\n';
            }
            out << '\n';
            out << pad_left("accuracy", label_width) << std::string(2 * kCol, ' ')
                << pad_left(fixed4(report.accuracy), kCol) << pad_left(std::to_string(report.total), kCol) << '\n';
            auto avg = [&](const char* label, const AverageMetrics& a) {
                out << pad_left(label, label_width) << pad_left(fixed4(a.precision), kCol)
                    << pad_left(fixed4(a.recall), kCol) << pad_left(fixed4(a.f1), kCol)
                    << pad_left(std::to_string(report.total), kCol) << '\n';
            };
            avg("macro avg", report.macro);
            avg("weighted avg", report.weighted);
            break;
        }
        case ReportFormat::csv: {
            out << "row,precision,recall,f1,support\n";
            for (const auto& m : report.classes) {
                out << csv_field(m.name) << ',' << full(m.precision) << ',' << full(m.recall) << ',' << full(m.f1)
                    << ',' << m.support << '\n';
            }
            out << "accuracy,,," << full(report.accuracy) << ',' << report.total << '\n';
            out << "macro avg," << full(report.macro.precision) << ',' << full(report.macro.recall) << ','
                << full(report.macro.f1) << ',' << report.total << '\n';
            out << "weighted avg," << full(report.weighted.precision) << ',' << full(report.weighted.recall) << ','
                << full(report.weighted.f1) << ',' << report.total << '\n';
            break;
        }
        case ReportFormat::json: {
            nlohmann::ordered_json doc;
            nlohmann::ordered_json classes = nlohmann::ordered_json::array();
            for (const auto& m : report.classes) {
                classes.push_back({{"name", m.name},
                                   {"precision", m.precision},
                                   {"recall", m.recall},
                                   {"f1", m.f1},
                                   {"support", m.support},
                                   {"zero_division", m.zero_division}});
            }
            doc["classes"] = std::move(classes);
            doc["accuracy"] = report.accuracy;
            doc["macro_avg"] = {{"precision", report.macro.precision},
                                {"recall", report.macro.recall},
                                {"f1", report.macro.f1}};
            doc["weighted_avg"] = {{"precision", report.weighted.precision},
                                   {"recall", report.weighted.recall},
                                   {"f1", report.weighted.f1}};
            doc["total"] = report.total;
            out << doc.dump(1) << '\n';
            break;
        }
    }
    return out.str();
}

ClassReport parse_report_json(std::string_view json_text) {
    ClassReport r;
    try {
        const auto doc = nlohmann::json::parse(json_text.begin(), json_text.end());
        for (const auto& c : doc.at("classes")) {
            r.classes.push_back({c.at("name").get<std::string>(), c.at("precision").get<double>(),
                                 c.at("recall").get<double>(), c.at("f1").get<double>(),
                                 c.at("support").get<std::int64_t>(), c.value("zero_division", false)});
        }
        r.accuracy = doc.at("accuracy").get<double>();
        auto avg = [](const nlohmann::json& a) {
            return AverageMetrics{a.at("precision").get<double>(), a.at("recall").get<double>(),
                                  a.at("f1").get<double>()};
        };
        r.macro = avg(doc.at("macro_avg"));
        r.weighted = avg(doc.at("weighted_avg"));
        r.total = doc.at("total").get<std::int64_t>();
    } catch (const nlohmann::json::exception& err) {
        throw FormatError(std::string("report JSON: ") + err.what());
    }
    return r;
}

std::string render_confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream out;
    out << "true\\predicted";
    for (const auto& n : cm.class_names) {
        out << ',' << csv_field(n);
    }
    out << '\n';
    for (std::size_t i = 0; i < cm.k; ++i) {
        out << csv_field(cm.class_names[i]);
        for (std::size_t j = 0; j < cm.k; ++j) {
            out << ',' << cm(i, j);
        }
        out << '\n';
    }
    return out.str();
}

ConfusionMatrix parse_confusion_csv(std::string_view csv) {
    std::vector<std::vector<std::string>> lines;
    std::size_t start = 0;
    while (start < csv.size()) {
        std::size_t end = csv.find('\n', start);
        if (end == std::string_view::npos) {
            end = csv.size();
        }
        std::string_view line = csv.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (!line.empty()) {
            lines.push_back(csv_split(line));
        }
        start = end + 1;
    }
    if (lines.empty()) {
        throw FormatError("confusion CSV is empty");
    }
    const std::vector<std::string> names(lines[0].begin() + 1, lines[0].end());
    if (names.empty() || lines.size() != names.size() + 1) {
        throw FormatError("confusion CSV needs a header and one row per class (" + std::to_string(names.size()) +
                          " classes, " + std::to_string(lines.size() - 1) + " rows)");
    }
    std::vector<std::vector<std::int64_t>> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& f = lines[i];
        if (f.size() != names.size() + 1 || f[0] != names[i - 1]) {
            throw FormatError("confusion CSV row " + std::to_string(i) + " does not match the header");
        }
        std::vector<std::int64_t> row;
        for (std::size_t j = 1; j < f.size(); ++j) {
            std::size_t used = 0;
            long long v = 0;
            try {
                v = std::stoll(f[j], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != f[j].size() || v < 0) {
                throw FormatError("confusion CSV cell '" + f[j] + "' is not a non-negative integer");
            }
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return confusion_matrix_from_counts(rows, names);
}

}  // namespace lungnet
