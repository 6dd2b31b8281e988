#pragma once

// Small deterministic backends for exercising decoders and score functions.

#include <cmath>
#include <string>
#include <vector>

#include "contra/backend.hpp"
#include "contra/logprob.hpp"
#include "contra/rng.hpp"
#include "contra/vocab.hpp"

namespace contra::testing {

inline Vocabulary make_vocab(std::size_t n) {
    std::vector<std::string> tokens;
    tokens.reserve(n);
    for (std::size_t i = 0; i < n; ++i) tokens.push_back("t" + std::to_string(i));
    return Vocabulary(std::move(tokens));
}

// Same fixed distribution for every context.
class FixedBackend final : public LMBackend {
public:
    FixedBackend(Vocabulary vocab, LogProbVector dist)
        : vocab_(std::move(vocab)), dist_(std::move(dist)) {}

    const Vocabulary& vocab() const override { return vocab_; }
    LogProbVector next_logprobs(const TokenSeq&) const override { return dist_; }

private:
    Vocabulary vocab_;
    LogProbVector dist_;
};

// Explicit conditional table on the last context token (row = last token,
// uniform when the context is empty). Rows are probabilities.
class BigramBackend final : public LMBackend {
public:
    BigramBackend(Vocabulary vocab, std::vector<std::vector<double>> rows)
        : vocab_(std::move(vocab)), rows_(std::move(rows)) {}

    const Vocabulary& vocab() const override { return vocab_; }

    LogProbVector next_logprobs(const TokenSeq& context) const override {
        if (context.empty()) {
            LogProbVector d;
            d.logp.assign(vocab_.size(), -std::log(static_cast<double>(vocab_.size())));
            return d;
        }
        const auto& row = rows_.at(static_cast<std::size_t>(context.back()));
        LogProbVector d;
        d.logp.reserve(row.size());
        for (double p : row) d.logp.push_back(p > 0.0 ? std::log(p) : kNegInf);
        return d;
    }

private:
    Vocabulary vocab_;
    std::vector<std::vector<double>> rows_;
};

// Pseudo-random but fully deterministic distribution per context: weights are
// derived from a hash of (seed, context, token). Full support, normalized.
class HashBackend final : public LMBackend {
public:
    HashBackend(Vocabulary vocab, std::uint64_t seed) : vocab_(std::move(vocab)), seed_(seed) {}

    const Vocabulary& vocab() const override { return vocab_; }

    LogProbVector next_logprobs(const TokenSeq& context) const override {
        std::uint64_t h = seed_;
        for (TokenId id : context) {
            SplitMix64 mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)));
            h = mix.next_u64();
        }
        std::vector<double> probs(vocab_.size());
        double total = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            SplitMix64 mix(h ^ (0x9E3779B97F4A7C15ull * (i + 1)));
            probs[i] = 0.05 + mix.next_double();  // bounded away from zero
            total += probs[i];
        }
        LogProbVector d;
        d.logp.reserve(probs.size());
        for (double p : probs) d.logp.push_back(std::log(p / total));
        return d;
    }

private:
    Vocabulary vocab_;
    std::uint64_t seed_;
};

// Random normalized distribution drawn from an explicit RNG (for property
// tests over many random vectors).
inline LogProbVector random_logprobs(std::size_t size, SplitMix64& rng, double min_weight = 1e-4) {
    std::vector<double> probs(size);
    double total = 0.0;
    for (auto& p : probs) {
        p = min_weight + rng.next_double();
        total += p;
    }
    LogProbVector d;
    d.logp.reserve(size);
    for (double p : probs) d.logp.push_back(std::log(p / total));
    return d;
}

}  // namespace contra::testing
