#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridvla {

struct McqItem {
    std::string id;
    std::optional<std::string> image; // path, possibly relative to the items file
    std::string question;
    std::vector<std::string> options; // 2..4, pairwise distinct
    int answer_index = 0;

    void validate() const;
};

struct ItemVerdict {
    std::string id;
    std::optional<int> predicted; // none: unmatched
    int  answer_index = 0;
    bool correct      = false;
    std::string note; // runner failure message, if any
};

struct EvalReport {
    int64_t total     = 0;
    int64_t answered  = 0;
    int64_t correct   = 0;
    int64_t unmatched = 0;
    double  accuracy  = 0.0; // correct / total; unmatched counts as incorrect
    std::vector<ItemVerdict> verdicts;

    nlohmann::json to_json() const;
    std::string table() const; // human-readable summary
};

// Question, options labeled "A." .. "D.", then a fixed single-letter directive.
std::string format_mcq_prompt(const McqItem & item);

// Matching cascade, first hit wins:
//  1) first standalone uppercase letter A..D within the option range
//  2) exact case-insensitive occurrence of an option's full text
//  3) none
std::optional<int> extract_choice(const std::string & response, const std::vector<std::string> & options);

// Maps (optional image ref, prompt) to the model's text answer. Throwing
// marks the item unmatched and the run continues.
using ModelRunner = std::function<std::string(const std::optional<std::string> & image,
                                              const std::string & prompt)>;

EvalReport evaluate(const ModelRunner & runner, const std::vector<McqItem> & items);

std::vector<McqItem> load_mcq_items(const std::filesystem::path & path);
void save_mcq_items(const std::filesystem::path & path, const std::vector<McqItem> & items);

} // namespace gridvla
