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

#include "muscap/lm_bridge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "muscap/error.hpp"
#include "muscap/hash.hpp"
#include "muscap/random.hpp"

namespace muscap {

namespace {

bool is_split_punct(char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

} // namespace

CaptionTarget LanguageModel::make_target(std::string text) const {
    CaptionTarget t;
    t.token_ids = tokenize(text);
    t.text = std::move(text);
    return t;
}

// ---------------------------------------------------------------------------

ToyTokenizer::ToyTokenizer(const std::vector<std::string> &words) {
    for (const char *special : {"<unk>", "<eos>"}) {
        ids_.emplace(special, static_cast<int>(words_.size()));
        words_.emplace_back(special);
    }
    for (const auto &w : words) {
        if (w.empty() || ids_.count(w) != 0) {
            continue;
        }
        ids_.emplace(w, static_cast<int>(words_.size()));
        words_.push_back(w);
    }
}

std::vector<std::string> ToyTokenizer::split(std::string_view text) const {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
            ++j;
        }
        if (j == i) {
            break;
        }
        std::string word(text.substr(i, j - i));
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        std::size_t cut = word.size();
        while (cut > 0 && is_split_punct(word[cut - 1])) {
            --cut;
        }
        if (cut > 0) {
            out.push_back(word.substr(0, cut));
        }
        for (std::size_t k = cut; k < word.size(); ++k) {
            out.emplace_back(1, word[k]);
        }
        i = j;
    }
    return out;
}

std::vector<int> ToyTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto &w : split(text)) {
        ids.push_back(id(w));
    }
    return ids;
}

int ToyTokenizer::id(const std::string &word) const {
    const auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
}

std::string ToyTokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kEos) {
            break;
        }
        const std::string &w = word(id);
        const bool attach = w.size() == 1 && is_split_punct(w[0]);
        if (!out.empty() && !attach) {
            out.push_back(' ');
        }
        out += w;
    }
    return out;
}

std::vector<std::string> default_toy_vocabulary() {
    return {
        ".", ",", "a", "an", "the", "and", "with", "of", "in", "on", "this", "is", "it", "that",
        "describe", "piece", "song", "track", "music", "features", "plays", "playing", "sung",
        "by", "vocals", "male", "female", "singer", "voice", "choir", "no", "instrumental",
        "piano", "guitar", "acoustic", "electric", "bass", "drums", "violin", "cello", "strings",
        "synth", "organ", "flute", "trumpet", "saxophone", "percussion", "calm", "happy", "sad",
        "energetic", "dark", "bright", "relaxing", "melancholic", "uplifting", "dreamy", "epic",
        "soft", "loud", "slow", "fast", "tempo", "rhythm", "melody", "harmony", "beat", "groove",
        "key", "major", "minor", "c", "d", "e", "f", "g", "b", "sharp", "flat", "rock", "pop",
        "jazz", "classical", "electronic", "ambient", "folk", "blues", "metal", "funk", "soul",
        "orchestral", "cinematic", "gentle", "driving", "steady", "upbeat", "mellow", "chords",
        "intro", "chorus", "ends", "starts", "builds", "low", "high", "quality", "recording",
    };
}

// ---------------------------------------------------------------------------

Matrix sinusoidal_positions(Eigen::Index rows, Eigen::Index dim) {
    Matrix pe(rows, dim);
    for (Eigen::Index p = 0; p < rows; ++p) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            pe(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
        }
    }
    return pe;
}

ToyLmWeights ToyLmWeights::random(const ToyLmConfig &config, int vocab_size) {
    const int d = config.dim;
    const int f = config.ffn;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(mix_seed(config.seed, 0x6c6dULL));
    ToyLmWeights w;
    w.embedding = rng.normal_matrix(vocab_size, d, 1.0);
    w.wq = rng.normal_matrix(d, d, sd);
    w.wk = rng.normal_matrix(d, d, sd);
    w.wv = rng.normal_matrix(d, d, sd);
    w.wo = rng.normal_matrix(d, d, sd);
    w.w1 = rng.normal_matrix(d, f, sd);
    w.b1 = Matrix::Zero(1, f);
    w.w2 = rng.normal_matrix(f, d, 1.0 / std::sqrt(static_cast<double>(f)));
    w.b2 = Matrix::Zero(1, d);
    w.out_w = rng.normal_matrix(d, vocab_size, 1.0);
    w.out_b = Matrix::Zero(1, vocab_size);
    return w;
}

ToyLanguageModel::ToyLanguageModel(ToyLmConfig config)
    : config_(std::move(config)), tokenizer_(config_.vocabulary),
      weights_(ToyLmWeights::random(config_, tokenizer_.size())) {}

ToyLanguageModel::ToyLanguageModel(ToyLmConfig config, ToyLmWeights weights)
    : config_(std::move(config)), tokenizer_(config_.vocabulary), weights_(std::move(weights)) {
    const int v = tokenizer_.size();
    const int d = config_.dim;
    if (weights_.embedding.rows() != v || weights_.embedding.cols() != d || weights_.out_w.rows() != d ||
        weights_.out_w.cols() != v || weights_.out_b.cols() != v) {
        throw ShapeError("toy LM weights do not match vocabulary size and dim");
    }
}

Matrix ToyLanguageModel::embed_ids(std::span<const int> ids) const {
    Matrix out(static_cast<Eigen::Index>(ids.size()), config_.dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = weights_.embedding.row(ids[i]);
    }
    return out;
}

TokenBlock ToyLanguageModel::embed_query(std::string_view text) const {
    if (is_blank(text)) {
        throw InvalidInput("query text is empty");
    }
    const std::vector<int> ids = tokenize(text);
    return {embed_ids(ids), TokenKind::query};
}

ad::Var ToyLanguageModel::forward(ad::Tape &tape, const ad::Var &inputs) const {
    const Eigen::Index s = inputs.rows();
    const auto c = [&tape](const Matrix &m) { return tape.constant(m); };
    const ad::Var x = ad::add(inputs, c(sinusoidal_positions(s, config_.dim)));

    const ad::Var q = ad::matmul(x, c(weights_.wq));
    const ad::Var k = ad::matmul(x, c(weights_.wk));
    const ad::Var v = ad::matmul(x, c(weights_.wv));
    const ad::Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(config_.dim)));
    const ad::Var attn = ad::causal_softmax_rows(scores);
    const ad::Var h = ad::layer_norm_rows(ad::add(x, ad::matmul(ad::matmul(attn, v), c(weights_.wo))));

    const ad::Var ff = ad::add_row(
        ad::matmul(ad::gelu(ad::add_row(ad::matmul(h, c(weights_.w1)), c(weights_.b1))), c(weights_.w2)),
        c(weights_.b2));
    const ad::Var y = ad::add(h, ff);

    return ad::add_row(ad::matmul(ad::layer_norm_rows(y), c(weights_.out_w)), c(weights_.out_b));
}

Matrix ToyLanguageModel::logits(const Matrix &prefix, std::span<const int> ids) const {
    Matrix inputs(prefix.rows() + static_cast<Eigen::Index>(ids.size()), config_.dim);
    inputs.topRows(prefix.rows()) = prefix;
    inputs.bottomRows(static_cast<Eigen::Index>(ids.size())) = embed_ids(ids);
    ad::Tape tape;
    return forward(tape, tape.constant(inputs)).value();
}

NllResult ToyLanguageModel::caption_nll(const Matrix &prefix, const CaptionTarget &target,
                                        bool with_grad) const {
    if (prefix.rows() < 1 || prefix.cols() != config_.dim) {
        throw ShapeError("caption_nll: prefix must be a non-empty P x " + std::to_string(config_.dim) +
                         " matrix");
    }
    if (!prefix.allFinite()) {
        throw NumericalError("caption_nll: prefix has non-finite entries");
    }
    if (target.token_ids.empty()) {
        throw InvalidInput("caption_nll: empty caption target");
    }
    ad::Tape tape;
    const ad::Var pre = with_grad ? tape.variable(prefix) : tape.constant(prefix);
    const ad::Var tokens = tape.constant(embed_ids(target.token_ids));
    const std::vector<ad::Var> parts{pre, tokens};
    const ad::Var out = forward(tape, ad::concat_rows(parts));

    // Position P-1 predicts the first caption token; the last row predicts <eos>.
    const auto n = static_cast<Eigen::Index>(target.token_ids.size());
    const ad::Var predicting = ad::slice_rows(out, prefix.rows() - 1, n + 1);
    std::vector<int> labels = target.token_ids;
    labels.push_back(ToyTokenizer::kEos);
    const ad::Var loss = ad::cross_entropy_rows(predicting, labels);

    NllResult result;
    result.loss = loss.value()(0, 0);
    if (with_grad) {
        tape.backward(loss);
        result.prefix_grad = pre.grad().size() ? pre.grad() : Matrix::Zero(prefix.rows(), prefix.cols());
    }
    return result;
}

std::string ToyLanguageModel::generate(const Matrix &prefix, int max_tokens) const {
    if (max_tokens < 1) {
        throw InvalidInput("generate: max_tokens must be >= 1");
    }
    if (prefix.rows() < 1 || prefix.cols() != config_.dim) {
        throw ShapeError("generate: prefix must be a non-empty P x " + std::to_string(config_.dim) + " matrix");
    }
    if (!prefix.allFinite()) {
        throw NumericalError("generate: prefix has non-finite entries");
    }
    std::vector<int> ids;
    while (static_cast<int>(ids.size()) < max_tokens) {
        const Matrix out = logits(prefix, ids);
        Eigen::Index best = 0;
        out.row(out.rows() - 1).maxCoeff(&best);
        if (best == ToyTokenizer::kEos) {
            break;
        }
        ids.push_back(static_cast<int>(best));
    }
    return detokenize(ids);
}

std::uint64_t ToyLanguageModel::parameter_hash() const {
    Fnv1a64 h;
    for (const Matrix *m : {&weights_.embedding, &weights_.wq, &weights_.wk, &weights_.wv, &weights_.wo,
                            &weights_.w1, &weights_.b1, &weights_.w2, &weights_.b2, &weights_.out_w,
                            &weights_.out_b}) {
        h.update(*m);
    }
    for (int i = 0; i < tokenizer_.size(); ++i) {
        h.update(tokenizer_.word(i));
    }
    return h.value();
}

} // namespace muscap
