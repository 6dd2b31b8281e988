#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "contra/backend.hpp"
#include "contra/error.hpp"
#include "contra/logprob.hpp"
#include "contra/vocab.hpp"

namespace contra {

// Counts for one interpolation order: context tuple -> (token -> count).
struct NGramCountTable {
    struct ContextCounts {
        std::unordered_map<TokenId, std::uint64_t> by_token;
        std::uint64_t total = 0;
    };
    std::unordered_map<TokenSeq, ContextCounts, detail::TokenSeqHash> contexts;

    void add(const TokenSeq& ctx, TokenId token, std::uint64_t n = 1) {
        auto& entry = contexts[ctx];
        entry.by_token[token] += n;
        entry.total += n;
    }

    const ContextCounts* find(const TokenSeq& ctx) const {
        auto it = contexts.find(ctx);
        return it == contexts.end() ? nullptr : &it->second;
    }
};

// Interpolated add-k n-gram model:
//   p(w | ctx) = sum_j lambda_j * (count_j(ctx_j, w) + k) / (total_j(ctx_j) + k*|V|)
// where ctx_j is the last j-1 tokens of the query context. k > 0 gives full
// support, so every output entry is finite.
class NGramModel : public LMBackend {
public:
    NGramModel(Vocabulary vocab, int order, double k, std::vector<double> lambdas)
        : vocab_(std::move(vocab)), order_(order), k_(k), lambdas_(std::move(lambdas)) {
        if (order_ < 1) throw InvalidParameter("NGramModel: order must be >= 1");
        if (!(k_ > 0.0) || !std::isfinite(k_))
            throw InvalidParameter("NGramModel: smoothing k must be finite and > 0");
        if (lambdas_.size() != static_cast<std::size_t>(order_))
            throw InvalidParameter("NGramModel: need one lambda per order");
        double sum = 0.0;
        for (double l : lambdas_) {
            if (l < 0.0) throw InvalidParameter("NGramModel: negative lambda");
            sum += l;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw InvalidParameter("NGramModel: lambdas must sum to 1");
        if (vocab_.empty()) throw InvalidParameter("NGramModel: empty vocabulary");
        tables_.resize(static_cast<std::size_t>(order_));
    }

    const Vocabulary& vocab() const override { return vocab_; }
    int order() const { return order_; }
    double smoothing_k() const { return k_; }
    const std::vector<double>& lambdas() const { return lambdas_; }
    const std::vector<NGramCountTable>& tables() const { return tables_; }

    void add_counts(std::size_t order_index, const TokenSeq& ctx, TokenId token,
                    std::uint64_t count) {
        if (order_index >= tables_.size())
            throw InvalidParameter("NGramModel: order index out of range");
        tables_[order_index].add(ctx, token, count);
    }

    void count_sequence(const TokenSeq& seq) {
        for (TokenId id : seq)
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size())
                throw InvalidParameter("NGramModel: token id outside vocabulary");
        for (std::size_t i = 0; i < seq.size(); ++i) {
            for (int j = 1; j <= order_; ++j) {
                const std::size_t hist = static_cast<std::size_t>(j - 1);
                if (i < hist) continue;
                TokenSeq ctx(seq.begin() + static_cast<std::ptrdiff_t>(i - hist),
                             seq.begin() + static_cast<std::ptrdiff_t>(i));
                tables_[static_cast<std::size_t>(j - 1)].add(ctx, seq[i]);
            }
        }
    }

    LogProbVector next_logprobs(const TokenSeq& context) const override {
        const std::size_t V = vocab_.size();
        std::vector<double> probs(V, 0.0);
        std::vector<double> scratch(V, 0.0);
        for (int j = 1; j <= order_; ++j) {
            const double lambda = lambdas_[static_cast<std::size_t>(j - 1)];
            if (lambda == 0.0) continue;
            const TokenSeq ctx = restrict_context(context, static_cast<std::size_t>(j - 1));
            std::fill(scratch.begin(), scratch.end(), 0.0);
            const double total = fill_counts(static_cast<std::size_t>(j - 1), ctx, scratch);
            const double denom = total + k_ * static_cast<double>(V);
            for (std::size_t w = 0; w < V; ++w)
                probs[w] += lambda * (scratch[w] + k_) / denom;
        }
        LogProbVector out;
        out.logp.resize(V);
        for (std::size_t w = 0; w < V; ++w) out.logp[w] = std::log(probs[w]);
        return out;
    }

protected:
    // Writes per-token counts for order index `oi` into `scratch`; returns the
    // context total. Overridden by the dynamic variant to blend its own table.
    virtual double fill_counts(std::size_t oi, const TokenSeq& ctx,
                               std::vector<double>& scratch) const {
        const auto* entry = tables_[oi].find(ctx);
        if (!entry) return 0.0;
        for (const auto& [token, count] : entry->by_token)
            scratch[static_cast<std::size_t>(token)] += static_cast<double>(count);
        return static_cast<double>(entry->total);
    }

    Vocabulary vocab_;
    int order_;
    double k_;
    std::vector<double> lambdas_;
    std::vector<NGramCountTable> tables_;
};

// Same estimator plus a separate generated-prefix count table. Single-owner:
// must not be shared across concurrent decoders.
class DynamicNGramModel final : public NGramModel {
public:
    using NGramModel::NGramModel;

    explicit DynamicNGramModel(const NGramModel& trained) : NGramModel(trained) {
        dynamic_.resize(static_cast<std::size_t>(order_));
    }

    bool is_dynamic() const override { return true; }

    // Increments the dynamic count for every order-j suffix of `context`
    // paired with `token`.
    void observe_generated(TokenId token, const TokenSeq& context) override {
        ensure_tables();
        for (int j = 1; j <= order_; ++j) {
            const TokenSeq ctx = restrict_context(context, static_cast<std::size_t>(j - 1));
            dynamic_[static_cast<std::size_t>(j - 1)].add(ctx, token);
        }
    }

    void reset_generation() override {
        dynamic_.clear();
        ensure_tables();
    }

private:
    void ensure_tables() {
        if (dynamic_.size() != static_cast<std::size_t>(order_))
            dynamic_.resize(static_cast<std::size_t>(order_));
    }

    double fill_counts(std::size_t oi, const TokenSeq& ctx,
                       std::vector<double>& scratch) const override {
        double total = NGramModel::fill_counts(oi, ctx, scratch);
        if (oi < dynamic_.size()) {
            if (const auto* entry = dynamic_[oi].find(ctx)) {
                for (const auto& [token, count] : entry->by_token)
                    scratch[static_cast<std::size_t>(token)] += static_cast<double>(count);
                total += static_cast<double>(entry->total);
            }
        }
        return total;
    }

    std::vector<NGramCountTable> dynamic_;
};

inline NGramModel train_ngram(const std::vector<TokenSeq>& corpus, int order, double k,
                              std::vector<double> lambdas, Vocabulary vocab) {
    if (corpus.empty()) throw InvalidParameter("train_ngram: empty corpus");
    NGramModel model(std::move(vocab), order, k, std::move(lambdas));
    for (const auto& seq : corpus) model.count_sequence(seq);
    return model;
}

// ---- model file io ---------------------------------------------------------
//
// Length-prefixed little-endian binary, canonical (sorted) table order so a
// save/load/save cycle is byte-identical. Layout:
//   "CNGM" u32:version=1 u32:order f64:k f64[order]:lambdas
//   vocab: u32:count (u32:len bytes)* i32:bos i32:eos i32:unk   (-1 = none)
//   per order j=1..n: u64:#contexts, each context:
//     i32[j-1]:ctx  u64:#tokens  (i32:token u64:count)*
// Dynamic-count state is transient and never serialized.

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("load_ngram: truncated file " + path);
    return v;
}

}  // namespace detail

inline void save_ngram(const NGramModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_ngram: cannot open " + path);
    out.write("CNGM", 4);
    detail::write_pod<std::uint32_t>(out, 1u);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.order()));
    detail::write_pod<double>(out, model.smoothing_k());
    for (double l : model.lambdas()) detail::write_pod<double>(out, l);

    const auto& vocab = model.vocab();
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.size()));
    for (const auto& tok : vocab.tokens()) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tok.size()));
        out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
    }
    const auto special = [](std::optional<TokenId> id) {
        return id ? static_cast<std::int32_t>(*id) : std::int32_t{-1};
    };
    detail::write_pod<std::int32_t>(out, special(vocab.bos()));
    detail::write_pod<std::int32_t>(out, special(vocab.eos()));
    detail::write_pod<std::int32_t>(out, special(vocab.unk()));

    for (const auto& table : model.tables()) {
        std::map<TokenSeq, std::map<TokenId, std::uint64_t>> sorted;
        for (const auto& [ctx, entry] : table.contexts) {
            auto& inner = sorted[ctx];
            for (const auto& [token, count] : entry.by_token) inner[token] = count;
        }
        detail::write_pod<std::uint64_t>(out, sorted.size());
        for (const auto& [ctx, inner] : sorted) {
            for (TokenId id : ctx) detail::write_pod<std::int32_t>(out, id);
            detail::write_pod<std::uint64_t>(out, inner.size());
            for (const auto& [token, count] : inner) {
                detail::write_pod<std::int32_t>(out, token);
                detail::write_pod<std::uint64_t>(out, count);
            }
        }
    }
    if (!out) throw IoError("save_ngram: write failed for " + path);
}

inline NGramModel load_ngram(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_ngram: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CNGM", 4) != 0)
        throw IoError("load_ngram: " + path + " is not a model file");
    const auto version = detail::read_pod<std::uint32_t>(in, path);
    if (version != 1u) throw IoError("load_ngram: unsupported version in " + path);
    const auto order = detail::read_pod<std::uint32_t>(in, path);
    const auto k = detail::read_pod<double>(in, path);
    std::vector<double> lambdas(order);
    for (auto& l : lambdas) l = detail::read_pod<double>(in, path);

    const auto vocab_size = detail::read_pod<std::uint32_t>(in, path);
    std::vector<std::string> tokens(vocab_size);
    for (auto& tok : tokens) {
        const auto len = detail::read_pod<std::uint32_t>(in, path);
        tok.resize(len);
        in.read(tok.data(), static_cast<std::streamsize>(len));
        if (!in) throw IoError("load_ngram: truncated file " + path);
    }
    const auto read_special = [&]() -> std::optional<TokenId> {
        const auto id = detail::read_pod<std::int32_t>(in, path);
        if (id < 0) return std::nullopt;
        return static_cast<TokenId>(id);
    };
    const auto bos = read_special();
    const auto eos = read_special();
    const auto unk = read_special();

    NGramModel model(Vocabulary(std::move(tokens), bos, eos, unk),
                     static_cast<int>(order), k, std::move(lambdas));
    for (std::uint32_t j = 1; j <= order; ++j) {
        const auto n_contexts = detail::read_pod<std::uint64_t>(in, path);
        for (std::uint64_t c = 0; c < n_contexts; ++c) {
            TokenSeq ctx(j - 1);
            for (auto& id : ctx) id = detail::read_pod<std::int32_t>(in, path);
            const auto n_tokens = detail::read_pod<std::uint64_t>(in, path);
            for (std::uint64_t t = 0; t < n_tokens; ++t) {
                const auto token = detail::read_pod<std::int32_t>(in, path);
                const auto count = detail::read_pod<std::uint64_t>(in, path);
                model.add_counts(static_cast<std::size_t>(j - 1), ctx, token, count);
            }
        }
    }
    return model;
}

}  // namespace contra
