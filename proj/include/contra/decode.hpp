#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "contra/backend.hpp"
#include "contra/contrast.hpp"
#include "contra/error.hpp"
#include "contra/logprob.hpp"
#include "contra/rng.hpp"
#include "contra/vocab.hpp"

namespace contra {

struct DecodeParams {
    std::size_t max_new_tokens = 256;
    std::size_t beam_width = 5;
    std::uint64_t seed = 0;
    bool eos_stops = false;

    void validate() const {
        if (beam_width < 1) throw InvalidParameter("DecodeParams: beam_width must be >= 1");
    }
};

struct StepInfo {
    TokenId token;
    double score;  // per-step value under the decoder's objective
    std::optional<std::size_t> plausible_size;
};

struct DecodeResult {
    TokenSeq continuation;
    std::vector<StepInfo> per_step;
    double objective_total = 0.0;
    std::vector<std::string> warnings;
};

// Partial continuation tracked by the beam decoders. cd_score_sum carries the
// factored contrastive objective; expert_logp_sum rides along for reporting.
struct BeamHypothesis {
    TokenSeq tokens;
    double cd_score_sum = 0.0;
    double expert_logp_sum = 0.0;
    bool finished = false;
};

namespace detail {

inline TokenSeq concat(const TokenSeq& prompt, const TokenSeq& cont) {
    TokenSeq full = prompt;
    full.insert(full.end(), cont.begin(), cont.end());
    return full;
}

inline bool lex_less(const TokenSeq& a, const TokenSeq& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

struct Candidate {
    TokenId token;
    double step_score;
    double expert_lp;
    std::optional<std::size_t> set_size;
};

// Candidates for one context, sorted (step_score desc, token id asc),
// truncated to at most beam_width entries by the caller.
using ExpandFn = std::function<std::vector<Candidate>(const TokenSeq& full_context)>;

// Called once per committed step when the pruned beam is a single hypothesis
// (dynamic-count amateurs observe the generated prefix through this).
using CommitFn = std::function<void(TokenId token, const TokenSeq& context_before)>;

struct TrackedHyp {
    BeamHypothesis hyp;
    std::vector<StepInfo> steps;
    double objective = 0.0;
};

inline bool better(const TrackedHyp& a, const TrackedHyp& b) {
    if (a.objective != b.objective) return a.objective > b.objective;
    return lex_less(a.hyp.tokens, b.hyp.tokens);
}

// Shared beam loop. Each live hypothesis expands with its own candidate list;
// the pooled expansions are pruned to beam_width by cumulative objective with
// lexicographically-smaller token sequences winning ties. No length
// normalization: live hypotheses always have equal length, and finished ones
// are kept aside rather than compared against longer live ones.
inline DecodeResult beam_loop(const ExpandFn& expand, const CommitFn& commit,
                              const TokenSeq& prompt, const DecodeParams& params,
                              std::optional<TokenId> eos) {
    params.validate();
    std::vector<TrackedHyp> live(1);
    std::vector<TrackedHyp> finished;

    for (std::size_t step = 0; step < params.max_new_tokens && !live.empty(); ++step) {
        std::vector<TrackedHyp> pool;
        pool.reserve(live.size() * params.beam_width);
        for (const auto& th : live) {
            const TokenSeq ctx = concat(prompt, th.hyp.tokens);
            auto candidates = expand(ctx);
            if (candidates.size() > params.beam_width) candidates.resize(params.beam_width);
            for (const auto& cand : candidates) {
                TrackedHyp next = th;
                next.hyp.tokens.push_back(cand.token);
                next.hyp.cd_score_sum += cand.step_score;
                next.hyp.expert_logp_sum += cand.expert_lp;
                next.objective += cand.step_score;
                next.steps.push_back({cand.token, cand.step_score, cand.set_size});
                if (params.eos_stops && eos && cand.token == *eos) next.hyp.finished = true;
                pool.push_back(std::move(next));
            }
        }
        std::sort(pool.begin(), pool.end(), better);
        live.clear();
        for (auto& th : pool) {
            if (th.hyp.finished) {
                finished.push_back(std::move(th));
            } else if (live.size() < params.beam_width) {
                live.push_back(std::move(th));
            }
        }
        if (finished.size() > params.beam_width) {
            std::sort(finished.begin(), finished.end(), better);
            finished.resize(params.beam_width);
        }
        // Single-beam commit point: the step's token is final here, so a
        // dynamic amateur can fold it into its generated-prefix counts before
        // the next expansion.
        if (commit && live.size() == 1 && !live[0].hyp.tokens.empty()) {
            const TokenSeq& toks = live[0].hyp.tokens;
            commit(toks.back(),
                   concat(prompt, TokenSeq(toks.begin(), toks.end() - 1)));
        }
    }

    const TrackedHyp* winner = nullptr;
    for (const auto& th : finished)
        if (!winner || better(th, *winner)) winner = &th;
    if (!winner)
        for (const auto& th : live)
            if (!winner || better(th, *winner)) winner = &th;

    DecodeResult result;
    if (winner) {
        result.continuation = winner->hyp.tokens;
        result.per_step = winner->steps;
        result.objective_total = winner->objective;
    }
    return result;
}

// Softmax over the listed entries of `scores`, in list order. A +inf score
// (possible only with a support-gapped amateur) collapses the mass onto the
// +inf entries.
inline std::vector<double> softmax_members(const std::vector<double>& scores,
                                           const std::vector<TokenId>& members) {
    std::vector<double> probs(members.size(), 0.0);
    double mx = kNegInf;
    for (TokenId id : members) mx = std::max(mx, scores[static_cast<std::size_t>(id)]);
    if (mx == std::numeric_limits<double>::infinity()) {
        std::size_t n_inf = 0;
        for (TokenId id : members)
            if (scores[static_cast<std::size_t>(id)] == mx) ++n_inf;
        for (std::size_t i = 0; i < members.size(); ++i)
            if (scores[static_cast<std::size_t>(members[i])] == mx)
                probs[i] = 1.0 / static_cast<double>(n_inf);
        return probs;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        probs[i] = std::exp(scores[static_cast<std::size_t>(members[i])] - mx);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

}  // namespace detail

// Argmax of the model distribution at each step, lowest id on ties.
inline DecodeResult greedy(const LMBackend& model, const TokenSeq& prompt,
                           const DecodeParams& params) {
    params.validate();
    DecodeResult result;
    TokenSeq ctx = prompt;
    for (std::size_t step = 0; step < params.max_new_tokens; ++step) {
        const LogProbVector d = model.next_logprobs(ctx);
        const TokenId t = argmax_token(d);
        result.continuation.push_back(t);
        result.per_step.push_back({t, d.logp[static_cast<std::size_t>(t)], std::nullopt});
        result.objective_total += d.logp[static_cast<std::size_t>(t)];
        ctx.push_back(t);
        if (params.eos_stops && model.vocab().eos() && t == *model.vocab().eos()) break;
    }
    return result;
}

// Beam search over cumulative model log-probability.
inline DecodeResult beam_search(const LMBackend& model, const TokenSeq& prompt,
                                const DecodeParams& params) {
    const auto expand = [&](const TokenSeq& ctx) {
        const LogProbVector d = model.next_logprobs(ctx);
        std::vector<detail::Candidate> cands;
        cands.reserve(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            cands.push_back({static_cast<TokenId>(i), d.logp[i], d.logp[i], std::nullopt});
        std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
            if (a.step_score != b.step_score) return a.step_score > b.step_score;
            return a.token < b.token;
        });
        return cands;
    };
    return detail::beam_loop(expand, nullptr, prompt, params, model.vocab().eos());
}

// Contrastive beam search: candidates are restricted to the expert's
// plausible set and scored by expert-minus-amateur log-probability. The
// amateur must already be weakened (wrapped by weakened_amateur); a dynamic
// amateur requires beam_width == 1 because it is single-owner state.
inline DecodeResult cd_search(const LMBackend& expert, LMBackend& amateur,
                              const TokenSeq& prompt, const ContrastConfig& cfg,
                              const DecodeParams& params, bool disable_vhead = false) {
    cfg.validate();
    params.validate();
    if (expert.vocab().size() != amateur.vocab().size())
        throw ContractViolation("cd_search: expert and amateur vocabulary sizes differ");
    if (amateur.is_dynamic() && params.beam_width != 1)
        throw InvalidParameter("cd_search: dynamic amateur requires beam_width == 1");
    if (amateur.is_dynamic()) amateur.reset_generation();

    double max_abs_score = 0.0;
    std::size_t steps_seen = 0;
    const auto expand = [&](const TokenSeq& ctx) {
        const LogProbVector expert_d = expert.next_logprobs(ctx);
        const LogProbVector amateur_d = amateur.next_logprobs(ctx);
        PlausibleSet set;
        if (disable_vhead) {
            set.log_threshold = kNegInf;
            set.members.resize(expert_d.size());
            for (std::size_t i = 0; i < expert_d.size(); ++i)
                set.members[i] = static_cast<TokenId>(i);
        } else {
            set = plausible_set(expert_d, cfg.alpha);
        }
        const ScoredStep scored = cd_scores(expert_d, amateur_d, set);
        std::vector<detail::Candidate> cands;
        cands.reserve(set.size());
        for (TokenId id : set.members) {
            const auto i = static_cast<std::size_t>(id);
            cands.push_back({id, scored.scores[i], expert_d.logp[i], set.size()});
            if (std::isfinite(scored.scores[i]))
                max_abs_score = std::max(max_abs_score, std::abs(scored.scores[i]));
        }
        ++steps_seen;
        std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
            if (a.step_score != b.step_score) return a.step_score > b.step_score;
            return a.token < b.token;
        });
        return cands;
    };

    detail::CommitFn commit;
    if (amateur.is_dynamic())
        commit = [&](TokenId token, const TokenSeq& ctx) { amateur.observe_generated(token, ctx); };

    DecodeResult result = detail::beam_loop(expand, commit, prompt, params, expert.vocab().eos());
    if (steps_seen > 0 && max_abs_score < 1e-12 && !result.continuation.empty())
        result.warnings.push_back(
            "degenerate contrast: expert and amateur agree on every plausible token; "
            "output is determined by tie-breaking");
    return result;
}

// Sampling variant: at each step the finite contrastive scores over the
// plausible set are softmax-normalized and sampled. Candidates are listed in
// ascending token id for the categorical draw.
inline DecodeResult cd_sample(const LMBackend& expert, LMBackend& amateur,
                              const TokenSeq& prompt, const ContrastConfig& cfg,
                              const DecodeParams& params, bool disable_vhead = false) {
    cfg.validate();
    params.validate();
    if (expert.vocab().size() != amateur.vocab().size())
        throw ContractViolation("cd_sample: expert and amateur vocabulary sizes differ");
    if (amateur.is_dynamic()) amateur.reset_generation();

    SplitMix64 rng(params.seed);
    DecodeResult result;
    TokenSeq ctx = prompt;
    for (std::size_t step = 0; step < params.max_new_tokens; ++step) {
        const LogProbVector expert_d = expert.next_logprobs(ctx);
        const LogProbVector amateur_d = amateur.next_logprobs(ctx);
        PlausibleSet set;
        if (disable_vhead) {
            set.log_threshold = kNegInf;
            set.members.resize(expert_d.size());
            for (std::size_t i = 0; i < expert_d.size(); ++i)
                set.members[i] = static_cast<TokenId>(i);
        } else {
            set = plausible_set(expert_d, cfg.alpha);
        }
        const ScoredStep scored = cd_scores(expert_d, amateur_d, set);
        const std::vector<double> probs = detail::softmax_members(scored.scores, set.members);
        const std::size_t pick = sample_categorical(probs, rng);
        const TokenId t = set.members[pick];
        if (amateur.is_dynamic()) amateur.observe_generated(t, ctx);
        result.continuation.push_back(t);
        result.per_step.push_back({t, scored.scores[static_cast<std::size_t>(t)], set.size()});
        result.objective_total += scored.scores[static_cast<std::size_t>(t)];
        ctx.push_back(t);
        if (params.eos_stops && expert.vocab().eos() && t == *expert.vocab().eos()) break;
    }
    return result;
}

namespace detail {

// Shared truncated-distribution sampler: `kept` lists (token, prob) in the
// decoder's documented keep order; probabilities are renormalized before the
// categorical draw. Returns the sampled token.
inline TokenId draw_from_kept(const std::vector<std::pair<TokenId, double>>& kept,
                              SplitMix64& rng) {
    double mass = 0.0;
    for (const auto& [t, p] : kept) mass += p;
    std::vector<double> probs;
    probs.reserve(kept.size());
    for (const auto& [t, p] : kept) probs.push_back(p / mass);
    return kept[sample_categorical(probs, rng)].first;
}

template <typename KeepFn>
DecodeResult truncated_sampler(const LMBackend& model, const TokenSeq& prompt,
                               const DecodeParams& params, const KeepFn& keep) {
    params.validate();
    SplitMix64 rng(params.seed);
    DecodeResult result;
    TokenSeq ctx = prompt;
    for (std::size_t step = 0; step < params.max_new_tokens; ++step) {
        const LogProbVector d = model.next_logprobs(ctx);
        const auto kept = keep(d);
        const TokenId t = draw_from_kept(kept, rng);
        result.continuation.push_back(t);
        result.per_step.push_back({t, d.logp[static_cast<std::size_t>(t)], std::nullopt});
        result.objective_total += d.logp[static_cast<std::size_t>(t)];
        ctx.push_back(t);
        if (params.eos_stops && model.vocab().eos() && t == *model.vocab().eos()) break;
    }
    return result;
}

}  // namespace detail

// Keep the k most probable tokens (boundary ties: lower id first), sample
// from the renormalized head.
inline DecodeResult top_k_sample(const LMBackend& model, const TokenSeq& prompt, std::size_t k,
                                 const DecodeParams& params) {
    if (k < 1) throw InvalidParameter("top_k_sample: k must be >= 1");
    const auto keep = [k](const LogProbVector& d) {
        std::vector<std::pair<TokenId, double>> order;
        order.reserve(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            order.emplace_back(static_cast<TokenId>(i), std::exp(d.logp[i]));
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (order.size() > k) order.resize(k);
        return order;
    };
    return detail::truncated_sampler(model, prompt, params, keep);
}

// Keep the smallest probability-sorted prefix with cumulative mass >= p
// (inclusive), sample from the renormalized nucleus.
inline DecodeResult nucleus_sample(const LMBackend& model, const TokenSeq& prompt, double p,
                                   const DecodeParams& params) {
    if (!(p > 0.0 && p <= 1.0)) throw InvalidParameter("nucleus_sample: p must be in (0, 1]");
    const auto keep = [p](const LogProbVector& d) {
        std::vector<std::pair<TokenId, double>> order;
        order.reserve(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            order.emplace_back(static_cast<TokenId>(i), std::exp(d.logp[i]));
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::pair<TokenId, double>> kept;
        double cum = 0.0;
        for (const auto& entry : order) {
            kept.push_back(entry);
            cum += entry.second;
            if (cum >= p) break;
        }
        return kept;
    };
    return detail::truncated_sampler(model, prompt, params, keep);
}

// Locally typical sampling: rank tokens by |(-logp) - H(p)| ascending (ties
// by id), keep the smallest prefix reaching cumulative mass tau_mass, then
// extend through entries whose distance exactly equals the boundary's (an
// all-ties distribution keeps the full vocabulary).
inline DecodeResult typical_sample(const LMBackend& model, const TokenSeq& prompt,
                                   double tau_mass, const DecodeParams& params) {
    if (!(tau_mass > 0.0 && tau_mass <= 1.0))
        throw InvalidParameter("typical_sample: tau must be in (0, 1]");
    const auto keep = [tau_mass](const LogProbVector& d) {
        double entropy = 0.0;
        for (double lp : d.logp)
            if (lp > kNegInf) entropy -= std::exp(lp) * lp;
        struct Entry {
            TokenId token;
            double prob;
            double dist;
        };
        std::vector<Entry> order;
        order.reserve(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double lp = d.logp[i];
            const double dist =
                lp > kNegInf ? std::abs(-lp - entropy) : std::numeric_limits<double>::infinity();
            order.push_back({static_cast<TokenId>(i), std::exp(lp), dist});
        }
        std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.token < b.token;
        });
        std::size_t cut = 0;
        double cum = 0.0;
        while (cut < order.size()) {
            cum += order[cut].prob;
            ++cut;
            if (cum >= tau_mass) break;
        }
        while (cut < order.size() && order[cut].dist == order[cut - 1].dist) ++cut;
        std::vector<std::pair<TokenId, double>> kept;
        kept.reserve(cut);
        for (std::size_t i = 0; i < cut; ++i) kept.emplace_back(order[i].token, order[i].prob);
        return kept;
    };
    return detail::truncated_sampler(model, prompt, params, keep);
}

}  // namespace contra
