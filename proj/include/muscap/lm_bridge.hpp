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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "muscap/autograd.hpp"
#include "muscap/projector.hpp"

namespace muscap {

inline constexpr std::string_view kDefaultQuery = "Describe this piece of music.";

struct CaptionTarget {
    std::string text;
    std::vector<int> token_ids;
};

/// Caption loss and its gradient with respect to the prefix rows.
struct NllResult {
    double loss = 0.0;
    Matrix prefix_grad; // empty unless requested
};

// Contract to a frozen autoregressive language model. Implementations must not
// mutate their weights and must be safe to call concurrently.
class LanguageModel {
  public:
    virtual ~LanguageModel() = default;

    /// Width of the input embedding space.
    virtual int dim() const = 0;

    virtual std::vector<int> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const int> ids) const = 0;

    /// One row per token of `text`, read from the frozen embedding table.
    /// Throws InvalidInput for blank text.
    virtual TokenBlock embed_query(std::string_view text) const = 0;

    /// Mean per-token cross-entropy of `target` (plus end of sequence)
    /// conditioned on the continuous `prefix` rows.
    virtual NllResult caption_nll(const Matrix &prefix, const CaptionTarget &target,
                                  bool with_grad) const = 0;

    /// Greedy decoding; stops at end of sequence or after `max_tokens` tokens.
    virtual std::string generate(const Matrix &prefix, int max_tokens) const = 0;

    virtual std::uint64_t parameter_hash() const = 0;

    CaptionTarget make_target(std::string text) const;
};

// ---------------------------------------------------------------------------
// Toy tokenizer: lowercases, splits on whitespace and splits trailing
// punctuation (. , ; : ! ?) into separate tokens. Decoding joins with single
// spaces and re-attaches punctuation, so lowercase in-vocabulary text written
// with single spaces round-trips exactly.

class ToyTokenizer {
  public:
    static constexpr int kUnk = 0;
    static constexpr int kEos = 1;

    /// Specials are prepended; duplicates in `words` are ignored.
    explicit ToyTokenizer(const std::vector<std::string> &words);

    std::vector<std::string> split(std::string_view text) const;
    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    int size() const { return static_cast<int>(words_.size()); }
    const std::string &word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    int id(const std::string &word) const;
    bool contains(const std::string &word) const { return ids_.count(word) != 0; }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

/// About a hundred lowercase words suited to short music captions.
std::vector<std::string> default_toy_vocabulary();

// ---------------------------------------------------------------------------
// Toy LM: one post-norm causal self-attention block with a GELU MLP, sinusoidal
// positions, a final layer norm and an untied output head. Inputs enter the
// attention without normalisation, so prefix magnitude can steer attention.
// Weights are drawn from a seed and never change.

struct ToyLmConfig {
    int dim = 16;
    int ffn = 32;
    std::uint64_t seed = 0;
    std::vector<std::string> vocabulary = default_toy_vocabulary();
};

struct ToyLmWeights {
    Matrix embedding; // V x d
    Matrix wq, wk, wv, wo;
    Matrix w1, b1, w2, b2;
    Matrix out_w; // d x V
    Matrix out_b; // 1 x V

    static ToyLmWeights random(const ToyLmConfig &config, int vocab_size);
};

class ToyLanguageModel final : public LanguageModel {
  public:
    explicit ToyLanguageModel(ToyLmConfig config = {});
    ToyLanguageModel(ToyLmConfig config, ToyLmWeights weights);

    int dim() const override { return config_.dim; }
    std::vector<int> tokenize(std::string_view text) const override { return tokenizer_.encode(text); }
    std::string detokenize(std::span<const int> ids) const override { return tokenizer_.decode(ids); }
    TokenBlock embed_query(std::string_view text) const override;
    NllResult caption_nll(const Matrix &prefix, const CaptionTarget &target, bool with_grad) const override;
    std::string generate(const Matrix &prefix, int max_tokens) const override;
    std::uint64_t parameter_hash() const override;

    const ToyTokenizer &tokenizer() const { return tokenizer_; }
    const ToyLmWeights &weights() const { return weights_; }
    int vocab_size() const { return tokenizer_.size(); }

    /// Logits for every position of prefix ++ embed(ids).
    Matrix logits(const Matrix &prefix, std::span<const int> ids) const;

  private:
    ad::Var forward(ad::Tape &tape, const ad::Var &inputs) const;
    Matrix embed_ids(std::span<const int> ids) const;

    ToyLmConfig config_;
    ToyTokenizer tokenizer_;
    ToyLmWeights weights_;
};

/// Sinusoidal position code, rows x dim.
Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index dim);

} // namespace muscap
