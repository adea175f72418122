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

#include "muscap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "muscap/error.hpp"
#include "muscap/hash.hpp"
#include "muscap/log.hpp"

namespace muscap {

Tokens metric_tokens(std::string_view text) {
    Tokens out;
    std::string cur;
    for (char ch : text) {
        auto u = static_cast<unsigned char>(ch);
        bool sep = u < 0x80 && (std::isspace(u) || std::ispunct(u));
        if (sep) {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::map<Tokens, std::size_t> ngram_counts(const Tokens &t, std::size_t n) {
    std::map<Tokens, std::size_t> counts;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        ++counts[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

} // namespace

double bleu(const Tokens &candidate, const std::vector<Tokens> &references, const BleuOptions &options) {
    if (options.max_n < 1) {
        throw InvalidInput("bleu: max_n must be >= 1");
    }
    if (references.empty()) {
        throw InvalidInput("bleu: no references");
    }
    if (candidate.empty()) {
        log_warning("bleu: empty candidate scores 0");
        return 0.0;
    }
    const std::size_t order = std::min<std::size_t>(static_cast<std::size_t>(options.max_n), candidate.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= order; ++n) {
        auto cand = ngram_counts(candidate, n);
        std::map<Tokens, std::size_t> max_ref;
        for (const auto &ref : references) {
            for (const auto &[gram, c] : ngram_counts(ref, n)) {
                auto &m = max_ref[gram];
                m = std::max(m, c);
            }
        }
        double clipped = 0.0;
        for (const auto &[gram, c] : cand) {
            auto it = max_ref.find(gram);
            if (it != max_ref.end()) {
                clipped += static_cast<double>(std::min(c, it->second));
            }
        }
        double total = static_cast<double>(candidate.size() - n + 1);
        if (options.smoothing && n >= 2) {
            clipped += 1.0;
            total += 1.0;
        }
        if (clipped == 0.0) {
            return 0.0;
        }
        log_sum += std::log(clipped / total);
    }
    const double c = static_cast<double>(candidate.size());
    double r = 0.0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto &ref : references) {
        double len = static_cast<double>(ref.size());
        double gap = std::abs(len - c);
        if (gap < best_gap || (gap == best_gap && len < r)) {
            best_gap = gap;
            r = len;
        }
    }
    double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return std::clamp(bp * std::exp(log_sum / static_cast<double>(order)), 0.0, 1.0);
}

double bleu(std::string_view candidate, const std::vector<std::string> &references, int max_n) {
    std::vector<Tokens> refs;
    for (const auto &r : references) {
        refs.push_back(metric_tokens(r));
    }
    return bleu(metric_tokens(candidate), refs, BleuOptions{max_n, false});
}

// ---------------------------------------------------------------------------

std::size_t lcs_length(const Tokens &a, const Tokens &b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const Tokens &candidate, const Tokens &reference, double beta) {
    if (!(beta > 0.0)) {
        throw InvalidInput("rouge_l: beta must be positive");
    }
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    double lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0.0) {
        return 0.0;
    }
    double p = lcs / static_cast<double>(candidate.size());
    double r = lcs / static_cast<double>(reference.size());
    double b2 = beta * beta;
    return std::clamp((1.0 + b2) * p * r / (r + b2 * p), 0.0, 1.0);
}

double rouge_l(std::string_view candidate, std::string_view reference, double beta) {
    return rouge_l(metric_tokens(candidate), metric_tokens(reference), beta);
}

// ---------------------------------------------------------------------------

namespace {

class AlignmentSearch {
  public:
    AlignmentSearch(const Tokens &c, const Tokens &r, const MeteorOptions &opt)
        : n_(c.size()), m_(r.size()), can_(n_ * m_, false), budget_(opt.search_budget) {
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < m_; ++j) {
                bool ok = c[i] == r[j];
                for (std::size_t k = 0; !ok && k < opt.matchers.size(); ++k) {
                    ok = opt.matchers[k]->match(c[i], r[j]);
                }
                can_[i * m_ + j] = ok;
            }
        }
    }

    MeteorAlignment run() {
        // Maximum matching by augmenting paths gives the target size and a
        // first feasible alignment.
        std::vector<long> ref_owner(m_, -1);
        for (std::size_t i = 0; i < n_; ++i) {
            std::vector<bool> seen(m_, false);
            augment(i, ref_owner, seen);
        }
        std::vector<long> cand_match(n_, -1);
        for (std::size_t j = 0; j < m_; ++j) {
            if (ref_owner[j] >= 0) {
                cand_match[static_cast<std::size_t>(ref_owner[j])] = static_cast<long>(j);
                ++target_;
            }
        }
        if (target_ == 0) {
            return {};
        }
        best_chunks_ = count_chunks(cand_match);

        used_.assign(m_, false);
        dfs(0, -1, 0, 0);
        return {target_, best_chunks_};
    }

  private:
    bool can(std::size_t i, std::size_t j) const { return can_[i * m_ + j]; }

    bool augment(std::size_t i, std::vector<long> &owner, std::vector<bool> &seen) {
        for (std::size_t j = 0; j < m_; ++j) {
            if (can(i, j) && !seen[j]) {
                seen[j] = true;
                if (owner[j] < 0 || augment(static_cast<std::size_t>(owner[j]), owner, seen)) {
                    owner[j] = static_cast<long>(i);
                    return true;
                }
            }
        }
        return false;
    }

    static std::size_t count_chunks(const std::vector<long> &cand_match) {
        std::size_t chunks = 0;
        long prev = -2;
        for (long j : cand_match) {
            if (j >= 0 && !(prev >= 0 && j == prev + 1)) {
                ++chunks;
            }
            prev = j;
        }
        return chunks;
    }

    // Upper bound on further matches from position i onwards.
    std::size_t reachable(std::size_t i) const {
        std::size_t cnt = 0;
        for (std::size_t k = i; k < n_; ++k) {
            for (std::size_t j = 0; j < m_; ++j) {
                if (!used_[j] && can(k, j)) {
                    ++cnt;
                    break;
                }
            }
        }
        return cnt;
    }

    // prev: reference position matched by candidate i-1, or -1.
    void dfs(std::size_t i, long prev, std::size_t matches, std::size_t chunks) {
        if (nodes_++ > budget_ || chunks >= best_chunks_) {
            return;
        }
        if (matches == target_) {
            best_chunks_ = chunks; // remaining positions stay unmatched
            return;
        }
        if (i == n_ || matches + reachable(i) < target_) {
            return;
        }
        if (prev >= 0 && static_cast<std::size_t>(prev + 1) < m_) {
            auto j = static_cast<std::size_t>(prev + 1);
            if (!used_[j] && can(i, j)) {
                used_[j] = true;
                dfs(i + 1, static_cast<long>(j), matches + 1, chunks);
                used_[j] = false;
            }
        }
        for (std::size_t j = 0; j < m_; ++j) {
            if (prev >= 0 && j == static_cast<std::size_t>(prev + 1)) {
                continue;
            }
            if (!used_[j] && can(i, j)) {
                used_[j] = true;
                dfs(i + 1, static_cast<long>(j), matches + 1, chunks + 1);
                used_[j] = false;
            }
        }
        dfs(i + 1, -1, matches, chunks);
    }

    std::size_t n_, m_;
    std::vector<bool> can_;
    std::vector<bool> used_;
    std::size_t target_ = 0;
    std::size_t best_chunks_ = 0;
    std::size_t nodes_ = 0;
    std::size_t budget_;
};

} // namespace

MeteorAlignment meteor_align(const Tokens &candidate, const Tokens &reference, const MeteorOptions &options) {
    if (candidate.empty() || reference.empty()) {
        return {};
    }
    return AlignmentSearch(candidate, reference, options).run();
}

double meteor_lite(const Tokens &candidate, const Tokens &reference, const MeteorOptions &options) {
    MeteorAlignment a = meteor_align(candidate, reference, options);
    if (a.matches == 0) {
        return 0.0;
    }
    double m = static_cast<double>(a.matches);
    double p = m / static_cast<double>(candidate.size());
    double r = m / static_cast<double>(reference.size());
    double fmean = p * r / (options.alpha * p + (1.0 - options.alpha) * r);
    double penalty = options.gamma * std::pow(static_cast<double>(a.chunks) / m, options.beta);
    return std::clamp(fmean * (1.0 - penalty), 0.0, 1.0);
}

double meteor_lite(std::string_view candidate, std::string_view reference, const MeteorOptions &options) {
    return meteor_lite(metric_tokens(candidate), metric_tokens(reference), options);
}

// ---------------------------------------------------------------------------

std::vector<Eigen::VectorXd> HashingEmbedder::embed(const Tokens &tokens) const {
    if (dim_ < 1) {
        throw MetricError("hashing embedder: dimension must be positive");
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(tokens.size());
    for (const auto &tok : tokens) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
        std::string padded = "#" + tok + "#";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
            Fnv1a64 h;
            h.update(std::string_view(padded).substr(i, 3));
            v(static_cast<Eigen::Index>(h.value() % static_cast<std::uint64_t>(dim_))) += 1.0;
        }
        out.push_back(v / v.norm());
    }
    return out;
}

namespace {

std::vector<Eigen::VectorXd> checked_embed(const TokenEmbedder &embedder, const Tokens &tokens) {
    std::vector<Eigen::VectorXd> vecs;
    try {
        vecs = embedder.embed(tokens);
    } catch (const MetricError &) {
        throw;
    } catch (const std::exception &e) {
        throw MetricError(std::string("embedder failed: ") + e.what());
    }
    if (vecs.size() != tokens.size()) {
        throw MetricError("embedder returned " + std::to_string(vecs.size()) + " vectors for " +
                          std::to_string(tokens.size()) + " tokens");
    }
    for (auto &v : vecs) {
        double norm = v.norm();
        if (!std::isfinite(norm) || norm == 0.0) {
            throw MetricError("embedder returned a zero or non-finite vector");
        }
        v /= norm;
        if (v.size() != vecs.front().size()) {
            throw MetricError("embedder returned vectors of different widths");
        }
    }
    return vecs;
}

} // namespace

double embed_similarity(const Tokens &candidate, const Tokens &reference, const TokenEmbedder &embedder) {
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    auto c = checked_embed(embedder, candidate);
    auto r = checked_embed(embedder, reference);
    Eigen::MatrixXd sim(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(r.size()));
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = 0; j < r.size(); ++j) {
            sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c[i].dot(r[j]);
        }
    }
    double p = sim.rowwise().maxCoeff().mean();
    double rec = sim.colwise().maxCoeff().mean();
    if (p + rec <= 0.0) {
        return 0.0;
    }
    return std::clamp(2.0 * p * rec / (p + rec), 0.0, 1.0);
}

double embed_similarity(std::string_view candidate, std::string_view reference, const TokenEmbedder &embedder) {
    return embed_similarity(metric_tokens(candidate), metric_tokens(reference), embedder);
}

// ---------------------------------------------------------------------------

PairScores score_pair(std::string_view prediction, std::string_view reference, const TokenEmbedder &embedder) {
    Tokens c = metric_tokens(prediction);
    Tokens r = metric_tokens(reference);
    PairScores s;
    s.bleu = bleu(c, {r}, BleuOptions{1, false});
    s.bleu4 = bleu(c, {r}, BleuOptions{4, false});
    s.meteor = meteor_lite(c, r);
    s.rouge_l = rouge_l(c, r);
    s.bert_like = embed_similarity(c, r, embedder);
    return s;
}

ScoreReport score_corpus(const std::vector<std::string> &predictions, const std::vector<std::string> &references,
                         const TokenEmbedder &embedder) {
    if (predictions.size() != references.size()) {
        throw ValidationError("score_corpus: " + std::to_string(predictions.size()) + " predictions but " +
                              std::to_string(references.size()) + " references");
    }
    ScoreReport report;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        report.pairs.push_back(score_pair(predictions[i], references[i], embedder));
    }
    if (!report.pairs.empty()) {
        PairScores &m = report.corpus;
        for (const auto &p : report.pairs) {
            m.bleu += p.bleu;
            m.bleu4 += p.bleu4;
            m.meteor += p.meteor;
            m.rouge_l += p.rouge_l;
            m.bert_like += p.bert_like;
        }
        double n = static_cast<double>(report.pairs.size());
        m.bleu /= n;
        m.bleu4 /= n;
        m.meteor /= n;
        m.rouge_l /= n;
        m.bert_like /= n;
    }
    return report;
}

namespace {

nlohmann::json scores_json(const PairScores &s) {
    return {{"bleu", s.bleu},
            {"bleu4", s.bleu4},
            {"meteor", s.meteor},
            {"rouge_l", s.rouge_l},
            {"bert_like", s.bert_like}};
}

} // namespace

nlohmann::json ScoreReport::to_json() const {
    nlohmann::json j;
    j["corpus"] = scores_json(corpus);
    j["pairs"] = nlohmann::json::array();
    for (const auto &p : pairs) {
        j["pairs"].push_back(scores_json(p));
    }
    if (judged) {
        j["feature_accuracy"] = feature_accuracy;
        j["judge_failures"] = judge_failures;
    }
    return j;
}

} // namespace muscap
