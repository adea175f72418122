/*
 * Copyright 2026 The muscap Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cmath>

#include "muscap/error.hpp"
#include "muscap/log.hpp"
#include "muscap/metrics.hpp"
#include "oracles.hpp"

using namespace muscap;

namespace {

struct QuietWarnings {
    LogSink old = set_warning_sink([](std::string_view) {});
    ~QuietWarnings() { set_warning_sink(old); }
};

// Treats tokens of equal length as synonyms.
class SameLength final : public TokenMatcher {
  public:
    bool match(const std::string &a, const std::string &b) const override { return a.size() == b.size(); }
};

// Maps every token to the same direction.
class ConstantEmbedder final : public TokenEmbedder {
  public:
    std::vector<Eigen::VectorXd> embed(const Tokens &t) const override {
        return std::vector<Eigen::VectorXd>(t.size(), Eigen::VectorXd::Ones(3));
    }
};

class BrokenEmbedder final : public TokenEmbedder {
  public:
    std::vector<Eigen::VectorXd> embed(const Tokens &) const override { return {}; }
};

} // namespace

TEST_CASE("metric tokenization") {
    CHECK(metric_tokens("A calm, PIANO-piece!  2nd") == Tokens{"a", "calm", "piano", "piece", "2nd"});
    CHECK(metric_tokens("  ").empty());
    CHECK(metric_tokens("caf\xC3\xA9 x") == Tokens{"caf\xC3\xA9", "x"});
}

TEST_CASE("bleu hand-counted cases") {
    CHECK(bleu("a b c", {"a b c"}, 4) == 1.0);
    CHECK(bleu("a b c", {"a b d"}, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(bleu("a b c d e", {"a c e b d"}, 4) == 0.0);
    // Brevity penalty: candidate of 2 against reference of 4.
    CHECK(bleu("a b", {"a b c d"}, 1) == doctest::Approx(std::exp(1.0 - 2.0)).epsilon(1e-12));
    // Clipping: "the" appears once in the reference.
    CHECK(bleu("the the the", {"the cat"}, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bleu options") {
    QuietWarnings quiet;
    Tokens c = {"a", "b", "c", "d"};
    Tokens r = {"a", "x", "c", "y"};
    CHECK(bleu(c, {r}, {2, false}) == 0.0);
    double smooth = bleu(c, {r}, {2, true});
    CHECK(smooth == doctest::Approx(std::sqrt(0.5 * (1.0 / 4.0))).epsilon(1e-12));
    CHECK(bleu(Tokens{}, {r}) == 0.0);
    CHECK_THROWS_AS(bleu(c, {}), InvalidInput);
    CHECK_THROWS_AS(bleu(c, {r}, {0, false}), InvalidInput);
    // Closest reference length wins; ties go to the shorter one.
    Tokens three = {"a", "b", "c"};
    Tokens five = {"a", "b", "c", "d", "e"};
    CHECK(bleu(c, {three, five}, {1, false}) == 1.0);
    CHECK(bleu(c, {five}, {1, false}) == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-12));
}

TEST_CASE("rouge-l hand-counted cases") {
    CHECK(rouge_l("a b c", "a b c") == 1.0);
    CHECK(rouge_l("a b c d", "a c d") == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
    CHECK(rouge_l("a b", "c d") == 0.0);
    CHECK(lcs_length({"a", "b", "c", "d"}, {"a", "c", "d"}) == 3);
    CHECK(rouge_l(Tokens{"a", "b", "c", "d"}, Tokens{"a", "c", "d"}, 2.0) ==
          doctest::Approx(5 * 0.75 * 1.0 / (1.0 + 4 * 0.75)).epsilon(1e-12));
}

TEST_CASE("meteor hand-computed cases") {
    CHECK(meteor_lite("a b c", "a b c") == doctest::Approx(1.0 - 0.5 / 27.0).epsilon(1e-12));
    CHECK(std::abs(meteor_lite("a b c", "a b c") - 0.9815) < 1e-4);
    CHECK(meteor_lite("a b", "c d") == 0.0);
    CHECK(meteor_lite("c b a", "a b c") < meteor_lite("a b c", "a b c"));
    MeteorAlignment rev = meteor_align({"c", "b", "a"}, {"a", "b", "c"});
    CHECK(rev.matches == 3);
    CHECK(rev.chunks == 3);
}

TEST_CASE("meteor prefers the alignment with the fewest chunks") {
    // Greedy left-to-right matching would pair the first "a" with the first
    // "a" and split the run "a b".
    MeteorAlignment a = meteor_align({"a", "b"}, {"a", "x", "a", "b"});
    CHECK(a.matches == 2);
    CHECK(a.chunks == 1);
}

TEST_CASE("extra matchers widen the alignment") {
    MeteorOptions opt;
    opt.matchers.push_back(std::make_shared<SameLength>());
    CHECK(meteor_align({"cat", "sat"}, {"dog", "ran"}, opt).matches == 2);
    CHECK(meteor_align({"cat", "sat"}, {"dog", "ran"}).matches == 0);
}

TEST_CASE("direct exhaustion against the oracles up to length 4") {
    QuietWarnings quiet;
    auto sentences = oracle::all_sentences(4);
    CHECK(sentences.size() == 341);
    std::size_t mismatches = 0;
    for (const auto &c : sentences) {
        for (const auto &r : sentences) {
            for (int n = 1; n <= 2; ++n) {
                if (std::abs(bleu(c, {r}, {n, false}) - oracle::bleu(c, {r}, n)) > 1e-12) ++mismatches;
            }
            if (std::abs(rouge_l(c, r) - oracle::rouge_l(c, r)) > 1e-12) ++mismatches;
            if (std::abs(meteor_lite(c, r) - oracle::meteor(c, r)) > 1e-12) ++mismatches;
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("multi-reference bleu agrees with the oracle") {
    auto sentences = oracle::all_sentences(3);
    std::size_t mismatches = 0;
    for (std::size_t i = 1; i < sentences.size(); i += 3) {
        for (std::size_t j = 1; j < sentences.size(); j += 5) {
            for (std::size_t k = 2; k < sentences.size(); k += 7) {
                std::vector<Tokens> refs = {sentences[j], sentences[k]};
                for (int n = 1; n <= 3; ++n) {
                    if (std::abs(bleu(sentences[i], refs, {n, false}) - oracle::bleu(sentences[i], refs, n)) > 1e-12) {
                        ++mismatches;
                    }
                }
            }
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("canonical pairs cover every pair exactly once") {
    std::size_t weighted = 0, reps = 0;
    oracle::for_each_canonical_pair(3, [&](const Tokens &c, const Tokens &r) {
        weighted += oracle::orbit_size(c, r);
        ++reps;
    });
    CHECK(weighted == 85u * 85u);
    CHECK(reps < weighted);
}

TEST_CASE("scores stay in the unit interval") {
    QuietWarnings quiet;
    HashingEmbedder emb;
    for (const char *c : {"", "a", "a a a", "a b c d", "piano calm"}) {
        for (const char *r : {"a", "b a", "a b c d e f", "calm piano"}) {
            PairScores s = score_pair(c, r, emb);
            for (double v : {s.bleu, s.bleu4, s.meteor, s.rouge_l, s.bert_like}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("embedding similarity") {
    HashingEmbedder emb;
    CHECK(embed_similarity("soft piano melody", "soft piano melody", emb) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(embed_similarity("a", "a", ConstantEmbedder{}) == doctest::Approx(1.0));
    double ab = embed_similarity("calm piano with soft melody", "loud drums", emb);
    double ba = embed_similarity("loud drums", "calm piano with soft melody", emb);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab < 0.5);
    CHECK(embed_similarity("", "x", emb) == 0.0);
    CHECK_THROWS_AS(embed_similarity("a b", "c", BrokenEmbedder{}), MetricError);
}

TEST_CASE("corpus scores average the pair scores") {
    HashingEmbedder emb;
    std::vector<std::string> preds = {"a calm piano piece", "loud rock song"};
    std::vector<std::string> refs = {"a calm piano piece", "quiet jazz tune"};
    ScoreReport r = score_corpus(preds, refs, emb);
    REQUIRE(r.pairs.size() == 2);
    CHECK(r.pairs[0].bleu == 1.0);
    CHECK(r.corpus.bleu == doctest::Approx((r.pairs[0].bleu + r.pairs[1].bleu) / 2));
    CHECK(r.corpus.meteor == doctest::Approx((r.pairs[0].meteor + r.pairs[1].meteor) / 2));
    ScoreReport same = score_corpus(preds, preds, emb);
    CHECK(same.corpus.bleu == 1.0);
    CHECK(same.corpus.rouge_l == 1.0);
    CHECK_THROWS_AS(score_corpus(preds, {"x"}, emb), ValidationError);
    nlohmann::json j = r.to_json();
    CHECK(j["corpus"].contains("bleu4"));
    CHECK_FALSE(j.contains("feature_accuracy"));
}
