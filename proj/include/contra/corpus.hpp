#pragma once

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "contra/error.hpp"
#include "contra/vocab.hpp"

namespace contra {

// One evaluation unit: a fixed-length prompt plus the passage remainder as
// reference continuation. Ids are stable across re-ingestion: "<path>:<index>"
// with index counting accepted passages in file order.
struct PromptInstance {
    std::string id;
    TokenSeq prompt;
    TokenSeq reference;
    std::size_t passage_tokens = 0;
};

enum class CorpusFormat { Txt, Jsonl };

inline CorpusFormat corpus_format_from_name(const std::string& name) {
    if (name == "txt") return CorpusFormat::Txt;
    if (name == "jsonl") return CorpusFormat::Jsonl;
    throw InvalidParameter("corpus format must be 'txt' or 'jsonl', got '" + name + "'");
}

// Raw passages: blank-line-separated for txt, one {"text": ...} object per
// line for jsonl. Malformed jsonl lines raise IngestError naming the line.
inline std::vector<std::string> read_passages(const std::string& path, CorpusFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open corpus file " + path);
    std::vector<std::string> passages;
    if (format == CorpusFormat::Txt) {
        std::string line, current;
        const auto flush = [&] {
            if (!current.empty()) passages.push_back(current);
            current.clear();
        };
        while (std::getline(in, line)) {
            if (split_words(line).empty()) {
                flush();
            } else {
                if (!current.empty()) current += '\n';
                current += line;
            }
        }
        flush();
    } else {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json obj;
            try {
                obj = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw IngestError(path + ":" + std::to_string(lineno) + ": malformed JSON: " +
                                  e.what());
            }
            if (!obj.contains("text") || !obj["text"].is_string())
                throw IngestError(path + ":" + std::to_string(lineno) +
                                  ": object has no string 'text' field");
            passages.push_back(obj["text"].get<std::string>());
        }
    }
    return passages;
}

struct IngestOptions {
    std::size_t prompt_words = 32;
    std::size_t min_passage_tokens = 160;
};

// Word-tokenizes each passage under the fixed vocabulary, drops passages
// shorter than min_passage_tokens, splits each survivor into a prompt of
// prompt_words tokens plus the remainder as reference.
inline std::vector<PromptInstance> ingest_corpus(const std::string& path, CorpusFormat format,
                                                 const Vocabulary& vocab,
                                                 const IngestOptions& opts = {}) {
    if (opts.prompt_words < 1)
        throw InvalidParameter("ingest_corpus: prompt_words must be >= 1");
    if (opts.min_passage_tokens <= opts.prompt_words)
        throw InvalidParameter("ingest_corpus: min_passage_tokens must exceed prompt_words");
    std::vector<PromptInstance> instances;
    std::size_t index = 0;
    for (const auto& passage : read_passages(path, format)) {
        const TokenSeq ids = tokenize(passage, vocab);
        if (ids.size() < opts.min_passage_tokens) continue;
        PromptInstance inst;
        inst.id = path + ":" + std::to_string(index++);
        inst.prompt.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(opts.prompt_words));
        inst.reference.assign(ids.begin() + static_cast<std::ptrdiff_t>(opts.prompt_words),
                              ids.end());
        inst.passage_tokens = ids.size();
        instances.push_back(std::move(inst));
    }
    return instances;
}

}  // namespace contra
