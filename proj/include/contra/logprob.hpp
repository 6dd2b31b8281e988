#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "contra/error.hpp"
#include "contra/vocab.hpp"

namespace contra {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double logsumexp(std::span<const double> logv) {
    double mx = kNegInf;
    for (double v : logv) mx = std::max(mx, v);
    if (!std::isfinite(mx)) return mx;  // all -inf (or a stray +inf/NaN propagates)
    double sum = 0.0;
    for (double v : logv) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

// One next-token distribution in natural-log space, length = vocabulary size.
struct LogProbVector {
    std::vector<double> logp;

    std::size_t size() const { return logp.size(); }
    double operator[](std::size_t i) const { return logp[i]; }
};

inline LogProbVector logprobs_from_probs(std::span<const double> probs) {
    LogProbVector d;
    d.logp.reserve(probs.size());
    for (double p : probs) {
        if (p < 0.0) throw InvalidParameter("logprobs_from_probs: negative probability");
        d.logp.push_back(p > 0.0 ? std::log(p) : kNegInf);
    }
    return d;
}

// Normalizes in log space (subtracts logsumexp). Used by backends whose raw
// scores are only proportional to a distribution.
inline LogProbVector lognormalize(LogProbVector d) {
    const double lse = logsumexp(d.logp);
    if (!std::isfinite(lse)) throw InvalidParameter("lognormalize: distribution has no mass");
    for (double& v : d.logp) v -= lse;
    return d;
}

inline bool is_normalized(const LogProbVector& d, double tol = 1e-6) {
    for (double v : d.logp)
        if (std::isnan(v)) return false;
    return std::abs(logsumexp(d.logp)) <= tol;
}

// Argmax with the engine-wide tie rule: lowest token id wins.
inline TokenId argmax_token(const LogProbVector& d) {
    if (d.logp.empty()) throw InvalidParameter("argmax_token: empty distribution");
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.logp.size(); ++i)
        if (d.logp[i] > d.logp[best]) best = i;
    return static_cast<TokenId>(best);
}

// Renormalized exp(logp / tau). tau == 1 returns the input unchanged so that
// temperature-1 wrappers are exact identities.
inline LogProbVector apply_temperature(const LogProbVector& d, double tau) {
    if (!std::isfinite(tau) || tau <= 0.0)
        throw InvalidParameter("apply_temperature: tau must be finite and > 0");
    if (tau == 1.0) return d;
    LogProbVector out;
    out.logp.resize(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out.logp[i] = d.logp[i] / tau;
    const double lse = logsumexp(out.logp);
    for (double& v : out.logp) v -= lse;
    return out;
}

}  // namespace contra
