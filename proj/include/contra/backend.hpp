#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>

#include "contra/error.hpp"
#include "contra/logprob.hpp"
#include "contra/vocab.hpp"

namespace contra {

// Abstract conditional distribution p(x_i | x_<i) over a fixed vocabulary.
// Implementations are deterministic: the same context always yields the same
// vector. Backends are immutable after construction and safe for concurrent
// scoring, except dynamic-count models (see ngram.hpp) which are single-owner.
class LMBackend {
public:
    virtual ~LMBackend() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual LogProbVector next_logprobs(const TokenSeq& context) const = 0;

    // Dynamic-count hooks; no-ops for every stateless backend.
    virtual bool is_dynamic() const { return false; }
    virtual void observe_generated(TokenId /*token*/, const TokenSeq& /*context*/) {}
    virtual void reset_generation() {}
};

// Last min(window, len) tokens, order preserved.
inline TokenSeq restrict_context(const TokenSeq& context, std::size_t window) {
    if (window >= context.size()) return context;
    return TokenSeq(context.end() - static_cast<std::ptrdiff_t>(window), context.end());
}

// Amateur weakening knobs: temperature and how many trailing prompt tokens
// the amateur is allowed to see (nullopt = unlimited).
struct AmateurConfig {
    double temperature = 1.0;
    std::optional<std::size_t> context_window;

    void validate() const {
        if (!std::isfinite(temperature) || temperature <= 0.0)
            throw InvalidParameter("AmateurConfig: temperature must be finite and > 0");
        if (context_window && *context_window < 1)
            throw InvalidParameter("AmateurConfig: context window must be >= 1");
    }
};

// Wraps a backend so it sees only the last `context_window` prompt tokens
// (generated continuation tokens are always retained) and answers at the
// configured temperature. `prompt_len` is the length of the prompt segment
// at the head of every context this wrapper will be queried with.
class WeakenedAmateur final : public LMBackend {
public:
    WeakenedAmateur(LMBackend& base, AmateurConfig cfg, std::size_t prompt_len)
        : base_(base), cfg_(cfg), prompt_len_(prompt_len) {
        cfg_.validate();
    }

    const Vocabulary& vocab() const override { return base_.vocab(); }

    LogProbVector next_logprobs(const TokenSeq& context) const override {
        return apply_temperature(base_.next_logprobs(weakened(context)), cfg_.temperature);
    }

    bool is_dynamic() const override { return base_.is_dynamic(); }

    void observe_generated(TokenId token, const TokenSeq& context) override {
        base_.observe_generated(token, weakened(context));
    }

    void reset_generation() override { base_.reset_generation(); }

private:
    TokenSeq weakened(const TokenSeq& context) const {
        if (!cfg_.context_window) return context;
        const std::size_t prompt_part = std::min(prompt_len_, context.size());
        if (prompt_part <= *cfg_.context_window) return context;
        TokenSeq out(context.begin() + static_cast<std::ptrdiff_t>(prompt_part - *cfg_.context_window),
                     context.end());
        return out;
    }

    LMBackend& base_;
    AmateurConfig cfg_;
    std::size_t prompt_len_;
};

inline std::unique_ptr<LMBackend> weakened_amateur(LMBackend& base, AmateurConfig cfg,
                                                   std::size_t prompt_len) {
    return std::make_unique<WeakenedAmateur>(base, cfg, prompt_len);
}

// -ln(size) for every token, any context.
class UniformBackend final : public LMBackend {
public:
    explicit UniformBackend(Vocabulary vocab) : vocab_(std::move(vocab)) {
        if (vocab_.empty()) throw InvalidParameter("UniformBackend: empty vocabulary");
    }

    const Vocabulary& vocab() const override { return vocab_; }

    LogProbVector next_logprobs(const TokenSeq&) const override {
        LogProbVector d;
        d.logp.assign(vocab_.size(), -std::log(static_cast<double>(vocab_.size())));
        return d;
    }

private:
    Vocabulary vocab_;
};

inline std::unique_ptr<LMBackend> uniform_backend(Vocabulary vocab) {
    return std::make_unique<UniformBackend>(std::move(vocab));
}

}  // namespace contra
