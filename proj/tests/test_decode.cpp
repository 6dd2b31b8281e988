#include "contra/decode.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "contra/ngram.hpp"
#include "support/oracles.hpp"
#include "support/toy_backends.hpp"

using namespace contra;
using Catch::Approx;

namespace {

DecodeParams params_with(std::size_t m, std::size_t beam = 5, std::uint64_t seed = 0) {
    DecodeParams p;
    p.max_new_tokens = m;
    p.beam_width = beam;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_CASE("greedy repeats a constant argmax forever", "[decode][greedy]") {
    testing::FixedBackend model(testing::make_vocab(3),
                                logprobs_from_probs(std::vector<double>{0.2, 0.7, 0.1}));
    const DecodeResult r = greedy(model, {0}, params_with(6));
    REQUIRE(r.continuation == TokenSeq{1, 1, 1, 1, 1, 1});
    REQUIRE(r.per_step.size() == 6);
    REQUIRE(r.objective_total == Approx(6.0 * std::log(0.7)).margin(1e-9));
}

TEST_CASE("greedy is deterministic", "[decode][greedy]") {
    testing::HashBackend model(testing::make_vocab(5), 77);
    const DecodeResult a = greedy(model, {2, 4}, params_with(12));
    const DecodeResult b = greedy(model, {2, 4}, params_with(12));
    REQUIRE(a.continuation == b.continuation);
    REQUIRE(a.objective_total == b.objective_total);
}

TEST_CASE("greedy matches the per-step argmax oracle on a bigram table", "[decode][greedy]") {
    testing::BigramBackend model(testing::make_vocab(3), {{0.1, 0.8, 0.1},
                                                          {0.3, 0.1, 0.6},
                                                          {0.5, 0.4, 0.1}});
    const DecodeResult r = greedy(model, {0}, params_with(8));
    TokenSeq ctx{0};
    for (TokenId chosen : r.continuation) {
        const LogProbVector d = model.next_logprobs(ctx);
        REQUIRE(chosen == argmax_token(d));
        ctx.push_back(chosen);
    }
}

TEST_CASE("beam width 1 reduces to greedy", "[decode][beam]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        testing::HashBackend model(testing::make_vocab(4 + seed % 5), 1000 + seed);
        const DecodeResult g = greedy(model, {0, 1}, params_with(6));
        const DecodeResult b = beam_search(model, {0, 1}, params_with(6, 1));
        REQUIRE(b.continuation == g.continuation);
    }
}

TEST_CASE("wide beam equals exhaustive likelihood maximization", "[decode][beam]") {
    testing::HashBackend model(testing::make_vocab(3), 555);
    const TokenSeq oracle = testing::enumerate_best_loglik(model, {1}, 2);
    const DecodeResult r = beam_search(model, {1}, params_with(2, 9));
    REQUIRE(r.continuation == oracle);
}

TEST_CASE("zero requested tokens give an empty continuation", "[decode][beam]") {
    testing::HashBackend model(testing::make_vocab(3), 1);
    REQUIRE(beam_search(model, {0}, params_with(0)).continuation.empty());
    REQUIRE(greedy(model, {0}, params_with(0)).continuation.empty());
}

TEST_CASE("every decoder emits exactly m tokens with eos stopping off", "[decode]") {
    testing::HashBackend expert(testing::make_vocab(6), 2024);
    testing::HashBackend amateur_base(testing::make_vocab(6), 9);
    auto uniform = uniform_backend(testing::make_vocab(6));
    const TokenSeq prompt{3};
    const std::size_t m = 7;
    ContrastConfig cfg;

    WeakenedAmateur amateur(amateur_base, cfg.amateur, prompt.size());
    REQUIRE(greedy(expert, prompt, params_with(m)).continuation.size() == m);
    REQUIRE(beam_search(expert, prompt, params_with(m, 3)).continuation.size() == m);
    REQUIRE(cd_search(expert, amateur, prompt, cfg, params_with(m, 3)).continuation.size() == m);
    REQUIRE(cd_sample(expert, amateur, prompt, cfg, params_with(m)).continuation.size() == m);
    REQUIRE(top_k_sample(expert, prompt, 3, params_with(m)).continuation.size() == m);
    REQUIRE(nucleus_sample(expert, prompt, 0.9, params_with(m)).continuation.size() == m);
    REQUIRE(typical_sample(expert, prompt, 0.9, params_with(m)).continuation.size() == m);
}

TEST_CASE("uniform amateur with alpha 0 reduces cd search to beam search", "[decode][cd]") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t vocab = 3 + seed % 6;
        testing::HashBackend expert(testing::make_vocab(vocab), 3000 + seed);
        UniformBackend amateur(testing::make_vocab(vocab));
        ContrastConfig cfg;
        cfg.alpha = 0.0;
        const DecodeParams params = params_with(5, 3);
        const DecodeResult cd = cd_search(expert, amateur, {0}, cfg, params);
        const DecodeResult beam = beam_search(expert, {0}, params);
        REQUIRE(cd.continuation == beam.continuation);
    }
}

TEST_CASE("uniform amateur at positive alpha equals beam search restricted to the set",
          "[decode][cd]") {
    // The reduction with alpha > 0: scores are expert log-probs shifted by a
    // constant, so the search picks the same tokens as likelihood maximization
    // over plausible candidates.
    testing::HashBackend expert(testing::make_vocab(5), 4242);
    UniformBackend amateur(testing::make_vocab(5));
    ContrastConfig cfg;
    cfg.alpha = 0.1;
    const DecodeResult cd = cd_search(expert, amateur, {2}, cfg, params_with(3, 125));
    const TokenSeq oracle = testing::enumerate_best_cd(expert, amateur, {2}, 0.1, 3);
    REQUIRE(cd.continuation == oracle);
}

TEST_CASE("self-contrast decodes by tie-breaking and warns", "[decode][cd]") {
    testing::HashBackend model(testing::make_vocab(4), 808);
    ContrastConfig cfg;  // tau = 1, unlimited window
    WeakenedAmateur amateur(model, cfg.amateur, 1);
    const DecodeResult r = cd_search(model, amateur, {1}, cfg, params_with(4, 2));
    REQUIRE_FALSE(r.warnings.empty());
    // all scores zero: winner must be the lexicographically smallest feasible
    // path, i.e. the lowest plausible token at every step
    TokenSeq ctx{1};
    for (TokenId chosen : r.continuation) {
        const PlausibleSet set = plausible_set(model.next_logprobs(ctx), cfg.alpha);
        REQUIRE(chosen == set.members.front());
        ctx.push_back(chosen);
    }
    REQUIRE(r.objective_total == Approx(0.0).margin(1e-12));
}

TEST_CASE("two-step hand-built pair matches exhaustive enumeration", "[decode][cd]") {
    testing::HashBackend expert(testing::make_vocab(4), 11);
    testing::HashBackend amateur_base(testing::make_vocab(4), 12);
    ContrastConfig cfg;
    cfg.alpha = 0.1;
    WeakenedAmateur amateur(amateur_base, cfg.amateur, 1);
    const DecodeResult r = cd_search(expert, amateur, {3}, cfg, params_with(2, 2));
    // beam 2 is wide enough here: verified against the full enumeration
    const TokenSeq oracle = testing::enumerate_best_cd(expert, amateur, {3}, cfg.alpha, 2);
    REQUIRE(r.continuation == oracle);
}

TEST_CASE("cd beam oracle agreement over random toy instances", "[decode][cd]") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const std::size_t vocab = 2 + seed % 4;  // up to 5
        const std::size_t m = 1 + seed % 3;      // up to 3
        testing::HashBackend expert(testing::make_vocab(vocab), 77000 + seed);
        testing::HashBackend amateur_base(testing::make_vocab(vocab), 88000 + seed);
        ContrastConfig cfg;
        cfg.alpha = 0.1;
        WeakenedAmateur amateur(amateur_base, cfg.amateur, 1);
        std::size_t beam = 1;
        for (std::size_t i = 0; i < m; ++i) beam *= vocab;
        const DecodeResult r = cd_search(expert, amateur, {0}, cfg, params_with(m, beam));
        const TokenSeq oracle = testing::enumerate_best_cd(expert, amateur, {0}, cfg.alpha, m);
        REQUIRE(r.continuation == oracle);
    }
}

TEST_CASE("replaying the continuation reproduces the cd objective", "[decode][cd]") {
    testing::HashBackend expert(testing::make_vocab(6), 313);
    testing::HashBackend amateur_base(testing::make_vocab(6), 314);
    ContrastConfig cfg;
    cfg.alpha = 0.1;
    cfg.amateur.temperature = 0.5;
    cfg.amateur.context_window = 1;
    const TokenSeq prompt{2, 5};
    WeakenedAmateur amateur(amateur_base, cfg.amateur, prompt.size());
    const DecodeResult r = cd_search(expert, amateur, prompt, cfg, params_with(10, 4));

    TokenSeq ctx = prompt;
    double replayed = 0.0;
    for (TokenId t : r.continuation) {
        const LogProbVector e = expert.next_logprobs(ctx);
        const LogProbVector a = amateur.next_logprobs(ctx);
        const PlausibleSet set = plausible_set(e, cfg.alpha);
        REQUIRE(set.contains(t));
        replayed += cd_scores(e, a, set).scores[static_cast<std::size_t>(t)];
        ctx.push_back(t);
    }
    REQUIRE(replayed == Approx(r.objective_total).margin(1e-9));
}

TEST_CASE("restricted self-contrast equals the mutual-information objective exactly",
          "[decode][cd]") {
    testing::HashBackend model(testing::make_vocab(5), 999);
    const TokenSeq prompt{0, 3, 1};
    ContrastConfig cfg;
    cfg.alpha = 0.1;
    cfg.amateur.temperature = 1.0;
    cfg.amateur.context_window = 1;
    WeakenedAmateur amateur(model, cfg.amateur, prompt.size());

    // several generated prefixes, exact bitwise equality per step
    for (const TokenSeq& generated : {TokenSeq{}, TokenSeq{2}, TokenSeq{4, 0}}) {
        TokenSeq ctx = prompt;
        ctx.insert(ctx.end(), generated.begin(), generated.end());
        const LogProbVector full = model.next_logprobs(ctx);
        const LogProbVector amat = amateur.next_logprobs(ctx);
        TokenSeq truncated(ctx.begin() + static_cast<std::ptrdiff_t>(prompt.size() - 1),
                           ctx.end());
        const LogProbVector trunc = model.next_logprobs(truncated);
        const PlausibleSet set = plausible_set(full, cfg.alpha);
        const ScoredStep step = cd_scores(full, amat, set);
        for (TokenId id : set.members) {
            const auto i = static_cast<std::size_t>(id);
            REQUIRE(step.scores[i] == full.logp[i] - trunc.logp[i]);
        }
    }
}

TEST_CASE("dynamic amateur strictly penalizes a completed n-gram repeat", "[decode][cd]") {
    const std::size_t V = 8;
    const auto vocab = testing::make_vocab(V);
    testing::HashBackend expert(vocab, 5150);
    const std::vector<double> lambdas{0.25, 0.25, 0.25, 0.25};

    DynamicNGramModel observing(vocab, 4, 1e-3, lambdas);
    DynamicNGramModel frozen(vocab, 4, 1e-3, lambdas);

    const TokenSeq prompt{0};
    // generated text that walks the same 4-token loop twice
    const TokenSeq generated{1, 2, 3, 4, 1, 2, 3, 4};
    TokenSeq ctx = prompt;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const TokenId t = generated[i];
        const LogProbVector e = expert.next_logprobs(ctx);
        const PlausibleSet set = plausible_set(e, 0.0);
        const double with_dynamic =
            cd_scores(e, observing.next_logprobs(ctx), set).scores[static_cast<std::size_t>(t)];
        const double with_static =
            cd_scores(e, frozen.next_logprobs(ctx), set).scores[static_cast<std::size_t>(t)];
        if (i >= 4) {
            // completing an n-gram seen in the generated prefix
            REQUIRE(with_dynamic < with_static);
        }
        observing.observe_generated(t, ctx);
        ctx.push_back(t);
    }
}

TEST_CASE("a dynamic amateur rejects beams wider than one", "[decode][cd]") {
    const auto vocab = testing::make_vocab(4);
    testing::HashBackend expert(vocab, 61);
    DynamicNGramModel amateur(vocab, 2, 1e-3, {0.5, 0.5});
    ContrastConfig cfg;
    REQUIRE_THROWS_AS(cd_search(expert, amateur, {0}, cfg, params_with(4, 2)), InvalidParameter);
    REQUIRE_NOTHROW(cd_search(expert, amateur, {0}, cfg, params_with(4, 1)));
}

TEST_CASE("vocabulary size mismatch is a contract violation", "[decode][cd]") {
    testing::HashBackend expert(testing::make_vocab(4), 1);
    testing::HashBackend amateur(testing::make_vocab(5), 2);
    ContrastConfig cfg;
    REQUIRE_THROWS_AS(cd_search(expert, amateur, {0}, cfg, params_with(2)), ContractViolation);
    REQUIRE_THROWS_AS(cd_sample(expert, amateur, {0}, cfg, params_with(2)), ContractViolation);
}

TEST_CASE("disabling the plausibility filter changes nothing under its reduction",
          "[decode][cd]") {
    // uniform amateur and alpha = 0: the constraint is already vacuous, so the
    // ablation flag must be a no-op
    testing::HashBackend expert(testing::make_vocab(5), 31337);
    UniformBackend amateur(testing::make_vocab(5));
    ContrastConfig cfg;
    cfg.alpha = 0.0;
    const DecodeResult with = cd_search(expert, amateur, {1}, cfg, params_with(6, 3), false);
    const DecodeResult without = cd_search(expert, amateur, {1}, cfg, params_with(6, 3), true);
    REQUIRE(with.continuation == without.continuation);
    REQUIRE(with.objective_total == without.objective_total);
}

TEST_CASE("eos stopping finishes hypotheses early", "[decode]") {
    // token 2 is eos; the backend drives every context toward it
    Vocabulary vocab({"a", "b", "</s>"}, std::nullopt, TokenId{2}, std::nullopt);
    testing::BigramBackend model(vocab, {{0.1, 0.3, 0.6}, {0.2, 0.2, 0.6}, {0.4, 0.4, 0.2}});
    DecodeParams params = params_with(10, 2);
    params.eos_stops = true;
    const DecodeResult g = greedy(model, {0}, params);
    REQUIRE(g.continuation.back() == 2);
    REQUIRE(g.continuation.size() < 10);
    const DecodeResult b = beam_search(model, {0}, params);
    REQUIRE(b.continuation.back() == 2);
}
