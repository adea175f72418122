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

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace muscap {

using Tokens = std::vector<std::string>;

/// Lowercases ASCII letters and splits on whitespace and ASCII punctuation.
/// Digits and non-ASCII bytes stay inside tokens.
Tokens metric_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// BLEU

struct BleuOptions {
    int max_n = 4;
    /// Add-one smoothing of the n >= 2 precisions.
    bool smoothing = false;
};

/// Clipped n-gram precisions combined by geometric mean, times the brevity
/// penalty against the reference closest in length (shorter wins ties).
/// Orders above the candidate length are left out. Returns 0 for an empty
/// candidate and whenever a used precision is 0 without smoothing.
double bleu(const Tokens &candidate, const std::vector<Tokens> &references, const BleuOptions &options = {});
double bleu(std::string_view candidate, const std::vector<std::string> &references, int max_n);

// ---------------------------------------------------------------------------
// ROUGE-L

std::size_t lcs_length(const Tokens &a, const Tokens &b);

/// LCS F-measure: (1 + beta^2) P R / (R + beta^2 P). beta = 1 gives F1.
double rouge_l(const Tokens &candidate, const Tokens &reference, double beta = 1.0);
double rouge_l(std::string_view candidate, std::string_view reference, double beta = 1.0);

// ---------------------------------------------------------------------------
// METEOR with exact matching and optional extra matchers

/// Decides whether two different surface tokens should align (stems,
/// synonyms, ...). Exact equality is always a match.
class TokenMatcher {
  public:
    virtual ~TokenMatcher() = default;
    virtual bool match(const std::string &candidate, const std::string &reference) const = 0;
};

struct MeteorOptions {
    double alpha = 0.9; // Fmean = P R / (alpha P + (1 - alpha) R)
    double beta = 3.0;
    double gamma = 0.5;
    std::vector<std::shared_ptr<const TokenMatcher>> matchers;
    /// Search nodes before settling for the best alignment found so far.
    std::size_t search_budget = 200000;
};

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

/// A one-to-one alignment with the largest number of matches and, among
/// those, the fewest chunks (runs contiguous and in order on both sides).
MeteorAlignment meteor_align(const Tokens &candidate, const Tokens &reference, const MeteorOptions &options = {});

/// Fmean * (1 - gamma * (chunks / matches)^beta); 0 without matches.
double meteor_lite(const Tokens &candidate, const Tokens &reference, const MeteorOptions &options = {});
double meteor_lite(std::string_view candidate, std::string_view reference, const MeteorOptions &options = {});

// ---------------------------------------------------------------------------
// Embedding similarity

/// Maps each token to a vector. Implementations throw MetricError on failure.
class TokenEmbedder {
  public:
    virtual ~TokenEmbedder() = default;
    virtual std::vector<Eigen::VectorXd> embed(const Tokens &tokens) const = 0;
};

/// Hashes padded character trigrams into a fixed number of buckets.
class HashingEmbedder final : public TokenEmbedder {
  public:
    explicit HashingEmbedder(int dim = 256) : dim_(dim) {}
    std::vector<Eigen::VectorXd> embed(const Tokens &tokens) const override;

  private:
    int dim_;
};

/// Greedy cosine matching F1: each token takes its best cosine on the other
/// side; precision and recall average those maxima. Clamped to [0, 1].
double embed_similarity(const Tokens &candidate, const Tokens &reference, const TokenEmbedder &embedder);
double embed_similarity(std::string_view candidate, std::string_view reference, const TokenEmbedder &embedder);

// ---------------------------------------------------------------------------
// Reports

struct PairScores {
    double bleu = 0.0;  // max_n = 1
    double bleu4 = 0.0; // max_n = 4
    double meteor = 0.0;
    double rouge_l = 0.0;
    double bert_like = 0.0;
};

struct ScoreReport {
    PairScores corpus; // arithmetic mean of the pair scores
    std::vector<PairScores> pairs;
    std::map<std::string, double> feature_accuracy;
    bool judged = false;
    std::size_t judge_failures = 0;

    nlohmann::json to_json() const;
};

PairScores score_pair(std::string_view prediction, std::string_view reference, const TokenEmbedder &embedder);

/// Throws ValidationError when the lists differ in length.
ScoreReport score_corpus(const std::vector<std::string> &predictions, const std::vector<std::string> &references,
                         const TokenEmbedder &embedder);

} // namespace muscap
