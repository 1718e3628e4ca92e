#include "evalharness.h"

#include "error.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace gridvla {

using nlohmann::json;

void McqItem::validate() const {
    if (options.size() < 2 || options.size() > 4) {
        fail(ErrorKind::parse, "item " + id + ": expected 2 to 4 options, got " +
                                   std::to_string(options.size()));
    }
    if (answer_index < 0 || answer_index >= (int) options.size()) {
        fail(ErrorKind::parse, "item " + id + ": answer index " + std::to_string(answer_index) +
                                   " outside option range");
    }
    std::set<std::string> distinct(options.begin(), options.end());
    if (distinct.size() != options.size()) {
        fail(ErrorKind::parse, "item " + id + ": options are not pairwise distinct");
    }
    if (question.find_first_not_of(" \t\r\n") == std::string::npos) {
        fail(ErrorKind::parse, "item " + id + ": empty question");
    }
}

std::string format_mcq_prompt(const McqItem & item) {
    item.validate();
    std::ostringstream os;
    os << item.question << "\n";
    for (size_t i = 0; i < item.options.size(); ++i) {
        os << (char) ('A' + i) << ". " << item.options[i] << "\n";
    }
    os << "Answer with the single letter of the correct option.";
    return os.str();
}

namespace {

bool is_word_char(char c) {
    return std::isalnum((unsigned char) c) != 0;
}

std::string lowercase(const std::string & s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return (char) std::tolower(c); });
    return out;
}

} // namespace

std::optional<int> extract_choice(const std::string & response, const std::vector<std::string> & options) {
    int n = (int) options.size();
    if (n < 2 || n > 4) fail(ErrorKind::usage, "extract_choice: option count must be in [2,4]");

    // rule 1: first standalone uppercase letter inside the valid range
    for (size_t i = 0; i < response.size(); ++i) {
        char c = response[i];
        if (c < 'A' || c >= 'A' + n) continue;
        bool left_ok  = i == 0 || !is_word_char(response[i - 1]);
        bool right_ok = i + 1 == response.size() || !is_word_char(response[i + 1]);
        if (left_ok && right_ok) return c - 'A';
    }

    // rule 2: whole option text, case-insensitive
    std::string lower = lowercase(response);
    for (int idx = 0; idx < n; ++idx) {
        if (lower.find(lowercase(options[(size_t) idx])) != std::string::npos) return idx;
    }
    return std::nullopt;
}

EvalReport evaluate(const ModelRunner & runner, const std::vector<McqItem> & items) {
    if (items.empty()) fail(ErrorKind::usage, "evaluate: no items");

    EvalReport report;
    report.total = (int64_t) items.size();
    for (const McqItem & item : items) {
        item.validate();
        ItemVerdict v;
        v.id           = item.id;
        v.answer_index = item.answer_index;
        try {
            std::string response = runner(item.image, format_mcq_prompt(item));
            v.predicted          = extract_choice(response, item.options);
        } catch (const std::exception & e) {
            v.note = e.what(); // failed items count as unmatched, run continues
        }
        if (v.predicted) {
            report.answered++;
            v.correct = *v.predicted == item.answer_index;
            if (v.correct) report.correct++;
        } else {
            report.unmatched++;
        }
        report.verdicts.push_back(std::move(v));
    }
    report.accuracy = (double) report.correct / (double) report.total;
    return report;
}

json EvalReport::to_json() const {
    json items = json::array();
    for (const ItemVerdict & v : verdicts) {
        json jv = {
            {"id", v.id},
            {"predicted", v.predicted ? json(*v.predicted) : json(nullptr)},
            {"answer_index", v.answer_index},
            {"correct", v.correct},
        };
        if (!v.note.empty()) jv["note"] = v.note;
        items.push_back(std::move(jv));
    }
    return json{
        {"total", total},       {"answered", answered}, {"correct", correct},
        {"unmatched", unmatched}, {"accuracy", accuracy}, {"items", items},
    };
}

std::string EvalReport::table() const {
    std::ostringstream os;
    os << "item                     predicted  reference  verdict\n";
    for (const ItemVerdict & v : verdicts) {
        std::string pred = v.predicted ? std::string(1, (char) ('A' + *v.predicted)) : "-";
        os << v.id;
        for (size_t i = v.id.size(); i < 25; ++i) os << ' ';
        os << pred << "          " << (char) ('A' + v.answer_index) << "          "
           << (v.correct ? "ok" : (v.predicted ? "wrong" : "unmatched")) << "\n";
    }
    os << "accuracy: " << correct << "/" << total << " = " << accuracy << "\n";
    return os.str();
}

std::vector<McqItem> load_mcq_items(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open items file: " + path.string());
    std::vector<McqItem> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            McqItem item;
            item.id = j.at("id").get<std::string>();
            if (j.contains("image") && !j.at("image").is_null()) {
                item.image = j.at("image").get<std::string>();
            }
            item.question     = j.at("question").get<std::string>();
            item.options      = j.at("options").get<std::vector<std::string>>();
            item.answer_index = j.at("answer_index").get<int>();
            item.validate();
            out.push_back(std::move(item));
        } catch (const json::exception & e) {
            fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error & e) {
            fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_mcq_items(const std::filesystem::path & path, const std::vector<McqItem> & items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write items file: " + path.string());
    for (const McqItem & item : items) {
        json j = {
            {"id", item.id},
            {"image", item.image ? json(*item.image) : json(nullptr)},
            {"question", item.question},
            {"options", item.options},
            {"answer_index", item.answer_index},
        };
        out << j.dump() << "\n";
    }
    if (!out) fail(ErrorKind::io, "failed writing items file: " + path.string());
}

} // namespace gridvla
