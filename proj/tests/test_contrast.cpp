#include "contra/contrast.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "contra/rng.hpp"
#include "support/toy_backends.hpp"

using namespace contra;
using Catch::Approx;

TEST_CASE("plausible set keeps everything above alpha times the max, inclusive", "[contrast]") {
    const LogProbVector expert = logprobs_from_probs(std::vector<double>{0.5, 0.3, 0.15, 0.05});
    const PlausibleSet set = plausible_set(expert, 0.1);
    REQUIRE(set.members == std::vector<TokenId>{0, 1, 2, 3});  // threshold 0.05, inclusive
}

TEST_CASE("alpha 1 keeps exactly the argmax tie set", "[contrast]") {
    const LogProbVector expert = logprobs_from_probs(std::vector<double>{0.4, 0.4, 0.2});
    const PlausibleSet set = plausible_set(expert, 1.0);
    REQUIRE(set.members == std::vector<TokenId>{0, 1});
}

TEST_CASE("alpha 0 keeps every token with nonzero probability", "[contrast]") {
    const LogProbVector expert = logprobs_from_probs(std::vector<double>{0.5, 0.0, 0.5});
    const PlausibleSet set = plausible_set(expert, 0.0);
    REQUIRE(set.members == std::vector<TokenId>{0, 2});
}

TEST_CASE("an implausible high-contrast token is filtered out", "[contrast]") {
    // One token at 3e-9 against a max expert probability of 0.5 >= 0.1: the
    // threshold 0.05 removes it even though its contrast would be enormous.
    const LogProbVector expert =
        logprobs_from_probs(std::vector<double>{0.5, 0.3, 0.2 - 3e-9, 3e-9});
    const PlausibleSet set = plausible_set(expert, 0.1);
    REQUIRE_FALSE(set.contains(3));
    REQUIRE(set.members == std::vector<TokenId>{0, 1, 2});
}

TEST_CASE("alpha outside the unit interval is rejected", "[contrast]") {
    const LogProbVector expert = logprobs_from_probs(std::vector<double>{1.0});
    REQUIRE_THROWS_AS(plausible_set(expert, -0.1), InvalidParameter);
    REQUIRE_THROWS_AS(plausible_set(expert, 1.5), InvalidParameter);
}

TEST_CASE("the argmax is always a member", "[contrast]") {
    SplitMix64 rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        const LogProbVector expert = testing::random_logprobs(2 + (trial % 30), rng);
        const double alpha = (trial % 2) ? rng.next_double() : 1.0;
        const PlausibleSet set = plausible_set(expert, alpha);
        REQUIRE_FALSE(set.members.empty());
        REQUIRE(set.contains(argmax_token(expert)));
    }
}

TEST_CASE("larger alpha gives a subset", "[contrast]") {
    SplitMix64 rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        const LogProbVector expert = testing::random_logprobs(16, rng);
        double a1 = rng.next_double(), a2 = rng.next_double();
        if (a1 > a2) std::swap(a1, a2);
        const PlausibleSet s1 = plausible_set(expert, a1);
        const PlausibleSet s2 = plausible_set(expert, a2);
        for (TokenId id : s2.members) REQUIRE(s1.contains(id));
    }
}

TEST_CASE("contrast of 3e-9 against 8e-14 is 10.53", "[contrast]") {
    const double contrast = std::log(3e-9) - std::log(8e-14);
    REQUIRE(contrast == Approx(10.53).margin(0.01));

    LogProbVector expert, amateur;
    expert.logp = {std::log(1.0 - 3e-9), std::log(3e-9)};
    amateur.logp = {std::log(1.0 - 8e-14), std::log(8e-14)};
    PlausibleSet all;
    all.members = {0, 1};
    const ScoredStep step = cd_scores(expert, amateur, all);
    REQUIRE(step.scores[1] == Approx(10.53).margin(0.01));
}

TEST_CASE("identical expert and amateur give zero scores on the set", "[contrast]") {
    const LogProbVector d = logprobs_from_probs(std::vector<double>{0.6, 0.25, 0.15});
    const PlausibleSet set = plausible_set(d, 0.1);
    const ScoredStep step = cd_scores(d, d, set);
    for (TokenId id : set.members) REQUIRE(step.scores[static_cast<std::size_t>(id)] == 0.0);
}

TEST_CASE("hand-computed three-token contrast", "[contrast]") {
    const LogProbVector expert = logprobs_from_probs(std::vector<double>{0.5, 0.3, 0.2});
    const LogProbVector amateur = logprobs_from_probs(std::vector<double>{0.7, 0.2, 0.1});
    const PlausibleSet set = plausible_set(expert, 0.4);
    REQUIRE(set.members == std::vector<TokenId>{0, 1, 2});
    const ScoredStep step = cd_scores(expert, amateur, set);
    REQUIRE(step.scores[0] == Approx(-0.336).margin(1e-3));
    REQUIRE(step.scores[1] == Approx(0.405).margin(1e-3));
    REQUIRE(step.scores[2] == Approx(0.693).margin(1e-3));

    // exhaustive check of the argmax over the set
    TokenId best = set.members.front();
    for (TokenId id : set.members)
        if (step.scores[static_cast<std::size_t>(id)] >
            step.scores[static_cast<std::size_t>(best)])
            best = id;
    REQUIRE(best == 2);
}

TEST_CASE("non-members score -inf", "[contrast]") {
    const LogProbVector expert = logprobs_from_probs(std::vector<double>{0.9, 0.05, 0.05});
    const LogProbVector amateur = logprobs_from_probs(std::vector<double>{0.2, 0.4, 0.4});
    const PlausibleSet set = plausible_set(expert, 0.5);
    REQUIRE(set.members == std::vector<TokenId>{0});
    const ScoredStep step = cd_scores(expert, amateur, set);
    REQUIRE(step.scores[1] == kNegInf);
    REQUIRE(step.scores[2] == kNegInf);
    REQUIRE(std::isfinite(step.scores[0]));
}

TEST_CASE("mismatched vocabularies violate the contract", "[contrast]") {
    const LogProbVector a = logprobs_from_probs(std::vector<double>{0.5, 0.5});
    const LogProbVector b = logprobs_from_probs(std::vector<double>{1.0});
    PlausibleSet set;
    set.members = {0};
    REQUIRE_THROWS_AS(cd_scores(a, b, set), ContractViolation);
    REQUIRE_THROWS_AS(pmi_scores(a, b), ContractViolation);
}

TEST_CASE("pmi of 0.6 versus 0.2 is ln 1.5", "[contrast]") {
    LogProbVector expert, amateur;
    expert.logp = {std::log(0.6), std::log(0.4)};
    amateur.logp = {std::log(0.2), std::log(0.8)};
    const auto pmi = pmi_scores(expert, amateur);
    REQUIRE(pmi[0] == Approx(std::log(0.6 / 0.4)).margin(1e-12));
    REQUIRE(pmi[0] == Approx(0.405).margin(1e-3));
}

TEST_CASE("pmi vanishes when the sources agree", "[contrast]") {
    const LogProbVector d = logprobs_from_probs(std::vector<double>{0.3, 0.7});
    const auto pmi = pmi_scores(d, d);
    REQUIRE(pmi[0] == Approx(0.0).margin(1e-12));
    REQUIRE(pmi[1] == Approx(0.0).margin(1e-12));
}

TEST_CASE("pmi approaches ln 2 as the amateur mass vanishes", "[contrast]") {
    LogProbVector expert, amateur;
    expert.logp = {std::log(0.5), std::log(0.5)};
    amateur.logp = {std::log(1e-300), std::log(1.0 - 1e-300)};
    const auto pmi = pmi_scores(expert, amateur);
    REQUIRE(pmi[0] == Approx(std::log(2.0)).margin(1e-9));
}

TEST_CASE("cd and pmi share their argmax over the plausible set", "[contrast]") {
    SplitMix64 rng(33);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t size = 2 + (static_cast<std::size_t>(rng.next_u64()) % 63);
        const LogProbVector expert = testing::random_logprobs(size, rng);
        const LogProbVector amateur = testing::random_logprobs(size, rng);
        const PlausibleSet set = plausible_set(expert, 0.1);
        const ScoredStep step = cd_scores(expert, amateur, set);
        const auto pmi = pmi_scores(expert, amateur);

        TokenId best_cd = set.members.front(), best_pmi = set.members.front();
        for (TokenId id : set.members) {
            const auto i = static_cast<std::size_t>(id);
            if (step.scores[i] > step.scores[static_cast<std::size_t>(best_cd)]) best_cd = id;
            if (pmi[i] > pmi[static_cast<std::size_t>(best_pmi)]) best_pmi = id;
        }
        REQUIRE(best_cd == best_pmi);
    }
}

TEST_CASE("a dominant expert token forces a singleton set", "[contrast]") {
    // With every other token below alpha * max, only the argmax survives and
    // the amateur cannot change the choice.
    SplitMix64 rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t size = 3 + (static_cast<std::size_t>(rng.next_u64()) % 14);
        const double alpha = 0.1;
        // uniform spread of the leftover mass keeps all others under the threshold
        const double p = 1.0 / (1.0 + alpha * static_cast<double>(size - 1)) + 1e-6;
        std::vector<double> probs(size, (1.0 - p) / static_cast<double>(size - 1));
        const std::size_t star = static_cast<std::size_t>(rng.next_u64()) % size;
        probs[star] = p;
        const LogProbVector expert = logprobs_from_probs(probs);
        const PlausibleSet set = plausible_set(expert, alpha);
        REQUIRE(set.members.size() == 1);
        REQUIRE(set.members.front() == static_cast<TokenId>(star));

        const LogProbVector amateur = testing::random_logprobs(size, rng);
        const ScoredStep step = cd_scores(expert, amateur, set);
        TokenId best = 0;
        double best_score = kNegInf;
        for (std::size_t i = 0; i < size; ++i)
            if (step.scores[i] > best_score) {
                best_score = step.scores[i];
                best = static_cast<TokenId>(i);
            }
        REQUIRE(best == static_cast<TokenId>(star));
    }
}

TEST_CASE("a shared 0.99 decision has near-zero contrast but survives", "[contrast]") {
    // p_exp = p_ama = 0.99: contrast magnitude stays under 1e-3 and the
    // singleton set keeps the token regardless.
    LogProbVector expert, amateur;
    expert.logp = {std::log(0.99), std::log(0.01)};
    amateur.logp = {std::log(0.99), std::log(0.01)};
    const PlausibleSet set = plausible_set(expert, 0.1);
    REQUIRE(set.members == std::vector<TokenId>{0});
    const ScoredStep step = cd_scores(expert, amateur, set);
    REQUIRE(std::abs(step.scores[0]) <= 1e-3);
}
