#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "contra/backend.hpp"
#include "contra/error.hpp"
#include "contra/logprob.hpp"
#include "contra/vocab.hpp"

namespace contra {

// Everything that determines the contrastive score function: the plausibility
// threshold alpha and how the amateur is weakened.
struct ContrastConfig {
    double alpha = 0.1;
    AmateurConfig amateur;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw InvalidParameter("ContrastConfig: alpha must be in [0, 1]");
        amateur.validate();
    }
};

// Tokens whose expert probability is at least alpha times the max expert
// probability at this step. Never empty for a valid expert distribution:
// the argmax always qualifies.
struct PlausibleSet {
    std::vector<TokenId> members;  // ascending token id
    double log_threshold = kNegInf;

    bool contains(TokenId id) const {
        return std::binary_search(members.begin(), members.end(), id);
    }
    std::size_t size() const { return members.size(); }
};

// {i : logp_i >= ln(alpha) + max_j logp_j}, inclusive at the boundary with
// exact comparison (no tolerance, so membership is deterministic). alpha = 0
// keeps every token with nonzero probability.
inline PlausibleSet plausible_set(const LogProbVector& expert, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw InvalidParameter("plausible_set: alpha must be in [0, 1]");
    if (expert.size() == 0) throw InvalidParameter("plausible_set: empty distribution");
    double mx = kNegInf;
    for (double v : expert.logp) mx = std::max(mx, v);
    PlausibleSet set;
    if (alpha == 0.0) {
        set.log_threshold = kNegInf;
        for (std::size_t i = 0; i < expert.size(); ++i)
            if (expert.logp[i] > kNegInf) set.members.push_back(static_cast<TokenId>(i));
        return set;
    }
    set.log_threshold = std::log(alpha) + mx;
    for (std::size_t i = 0; i < expert.size(); ++i)
        if (expert.logp[i] >= set.log_threshold) set.members.push_back(static_cast<TokenId>(i));
    return set;
}

// Token-level contrastive scores: expert minus amateur log-probability on
// plausible-set members, -inf elsewhere. The amateur is expected to be
// temperature-weakened already; the set must come from the expert vector
// alone (the amateur never affects membership).
struct ScoredStep {
    std::vector<double> scores;
    LogProbVector expert_logp;
    LogProbVector amateur_logp;
};

inline ScoredStep cd_scores(const LogProbVector& expert, const LogProbVector& amateur,
                            const PlausibleSet& set) {
    if (expert.size() != amateur.size())
        throw ContractViolation("cd_scores: expert and amateur vocabulary sizes differ");
    ScoredStep step;
    step.scores.assign(expert.size(), kNegInf);
    for (TokenId id : set.members) {
        const auto i = static_cast<std::size_t>(id);
        step.scores[i] = expert.logp[i] - amateur.logp[i];
    }
    step.expert_logp = expert;
    step.amateur_logp = amateur;
    return step;
}

// Pointwise mutual information against a 50/50 expert/amateur mixture:
//   pmi_i = logp_exp_i - log(0.5 exp(logp_exp_i) + 0.5 exp(logp_ama_i))
// computed in log space. A strictly increasing function of the CD score
// (expert - amateur), so the two objectives share their argmax over any set.
inline std::vector<double> pmi_scores(const LogProbVector& expert, const LogProbVector& amateur) {
    if (expert.size() != amateur.size())
        throw ContractViolation("pmi_scores: expert and amateur vocabulary sizes differ");
    std::vector<double> pmi(expert.size());
    for (std::size_t i = 0; i < expert.size(); ++i) {
        const double e = expert.logp[i];
        const double a = amateur.logp[i];
        if (e == kNegInf) {
            pmi[i] = kNegInf;
            continue;
        }
        // log(0.5 e^e + 0.5 e^a) = log 0.5 + max + log(e^(e-max) + e^(a-max))
        const double mx = std::max(e, a);
        const double mix = std::log(0.5) + mx + std::log(std::exp(e - mx) + std::exp(a - mx));
        pmi[i] = e - mix;
    }
    return pmi;
}

}  // namespace contra
