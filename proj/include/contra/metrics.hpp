#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "contra/backend.hpp"
#include "contra/error.hpp"
#include "contra/vocab.hpp"

namespace contra {

// Fraction of duplicated overlapping n-grams (stride 1) in the continuation:
// 1 - distinct/total. Undefined for sequences shorter than n.
inline double rep_n(const TokenSeq& cont, std::size_t n) {
    if (n < 1) throw InvalidParameter("rep_n: n must be >= 1");
    if (cont.size() < n)
        throw UndefinedMetric("rep_n: sequence shorter than n");
    const std::size_t total = cont.size() - n + 1;
    std::unordered_set<TokenSeq, detail::TokenSeqHash> distinct;
    for (std::size_t i = 0; i < total; ++i)
        distinct.insert(TokenSeq(cont.begin() + static_cast<std::ptrdiff_t>(i),
                                 cont.begin() + static_cast<std::ptrdiff_t>(i + n)));
    return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

// Product over n in {2,3,4} of (1 - rep_n).
inline double diversity(const TokenSeq& cont) {
    double div = 1.0;
    for (std::size_t n = 2; n <= 4; ++n) div *= 1.0 - rep_n(cont, n);
    return div;
}

// Fixed-dimension text embedding; deterministic, nonzero for non-empty input.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed(const TokenSeq& ids) const = 0;
};

// L2-normalized token-count vector. A dependency-free stand-in for a learned
// sentence encoder: it preserves the cosine structure of the coherence metric
// while staying exactly recomputable.
class BagOfWordsEmbedder final : public Embedder {
public:
    explicit BagOfWordsEmbedder(std::size_t vocab_size) : vocab_size_(vocab_size) {
        if (vocab_size_ == 0) throw InvalidParameter("BagOfWordsEmbedder: empty vocabulary");
    }

    std::vector<double> embed(const TokenSeq& ids) const override {
        std::vector<double> v(vocab_size_, 0.0);
        for (TokenId id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_)
                throw InvalidParameter("BagOfWordsEmbedder: id outside vocabulary");
            v[static_cast<std::size_t>(id)] += 1.0;
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (double& x : v) x /= norm;
        return v;
    }

private:
    std::size_t vocab_size_;
};

// Embedder backed by externally computed vectors keyed by the detokenized
// text (the embedding-exchange JSONL below carries them).
class PrecomputedEmbedder final : public Embedder {
public:
    PrecomputedEmbedder(std::map<std::string, std::vector<double>> vectors, const Vocabulary& vocab)
        : vectors_(std::move(vectors)), vocab_(&vocab) {}

    std::vector<double> embed(const TokenSeq& ids) const override {
        const std::string key = detokenize(ids, *vocab_);
        auto it = vectors_.find(key);
        if (it == vectors_.end())
            throw InvalidParameter("PrecomputedEmbedder: no vector for '" + key + "'");
        return it->second;
    }

private:
    std::map<std::string, std::vector<double>> vectors_;
    const Vocabulary* vocab_;
};

// Cosine similarity between prompt and continuation embeddings.
inline double coherence(const TokenSeq& prompt, const TokenSeq& cont, const Embedder& emb) {
    if (prompt.empty() || cont.empty())
        throw UndefinedMetric("coherence: empty prompt or continuation");
    const std::vector<double> a = emb.embed(prompt);
    const std::vector<double> b = emb.embed(cont);
    if (a.size() != b.size())
        throw ContractViolation("coherence: embedder returned mismatched dimensions");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw UndefinedMetric("coherence: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// exp(-(1/m) sum_i log p_scorer(x_i | prompt + cont_<i))
inline double perplexity(const TokenSeq& cont, const TokenSeq& prompt, const LMBackend& scorer) {
    if (cont.empty()) throw UndefinedMetric("perplexity: empty continuation");
    TokenSeq ctx = prompt;
    double total = 0.0;
    for (TokenId t : cont) {
        const LogProbVector d = scorer.next_logprobs(ctx);
        total += d.logp[static_cast<std::size_t>(t)];
        ctx.push_back(t);
    }
    return std::exp(-total / static_cast<double>(cont.size()));
}

struct MetricsReport {
    double rep2 = 0.0;
    double rep3 = 0.0;
    double rep4 = 0.0;
    double diversity = 0.0;
    double coherence = 0.0;
    std::optional<double> ppl;
};

inline MetricsReport compute_metrics(const TokenSeq& prompt, const TokenSeq& cont,
                                     const Embedder& emb, const LMBackend* scorer = nullptr) {
    MetricsReport report;
    report.rep2 = rep_n(cont, 2);
    report.rep3 = rep_n(cont, 3);
    report.rep4 = rep_n(cont, 4);
    report.diversity = (1.0 - report.rep2) * (1.0 - report.rep3) * (1.0 - report.rep4);
    report.coherence = coherence(prompt, cont, emb);
    if (scorer) report.ppl = perplexity(cont, prompt, *scorer);
    return report;
}

// ---- embedding exchange (JSONL, one {"id", "vector"} object per text) ------

inline void write_embeddings_jsonl(const std::string& path,
                                   const std::map<std::string, std::vector<double>>& vectors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_embeddings_jsonl: cannot open " + path);
    for (const auto& [id, vec] : vectors) {
        nlohmann::ordered_json obj;
        obj["id"] = id;
        obj["vector"] = vec;
        out << obj.dump() << '\n';
    }
}

inline std::map<std::string, std::vector<double>> read_embeddings_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_embeddings_jsonl: cannot open " + path);
    std::map<std::string, std::vector<double>> vectors;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("read_embeddings_jsonl: " + path + ":" + std::to_string(lineno) + ": " +
                          e.what());
        }
        vectors[obj.at("id").get<std::string>()] = obj.at("vector").get<std::vector<double>>();
    }
    return vectors;
}

}  // namespace contra
