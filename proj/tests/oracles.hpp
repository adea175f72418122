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

// Brute-force reference implementations of the text metrics. They share no
// code with the library and favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace muscap::oracle {

using Sentence = std::vector<std::string>;

inline std::size_t occurrences(const Sentence &s, const Sentence &t, std::size_t at, std::size_t n) {
    std::size_t count = 0;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        bool same = true;
        for (std::size_t k = 0; k < n; ++k) same = same && s[i + k] == t[at + k];
        if (same) ++count;
    }
    return count;
}

/// Clipped n-gram BLEU with the closest-length brevity penalty and the order
/// capped at the candidate length.
inline double bleu(const Sentence &c, const std::vector<Sentence> &refs, int max_n) {
    if (c.empty()) return 0.0;
    const std::size_t order = std::min<std::size_t>(static_cast<std::size_t>(max_n), c.size());
    double product = 1.0;
    for (std::size_t n = 1; n <= order; ++n) {
        std::size_t clipped = 0;
        for (std::size_t i = 0; i + n <= c.size(); ++i) {
            // Count each distinct n-gram once, at its first position.
            bool first = true;
            for (std::size_t j = 0; j < i && first; ++j) {
                bool same = true;
                for (std::size_t k = 0; k < n; ++k) same = same && c[j + k] == c[i + k];
                if (same) first = false;
            }
            if (!first) continue;
            std::size_t in_c = occurrences(c, c, i, n);
            std::size_t in_r = 0;
            for (const auto &r : refs) in_r = std::max(in_r, occurrences(r, c, i, n));
            clipped += std::min(in_c, in_r);
        }
        if (clipped == 0) return 0.0;
        product *= static_cast<double>(clipped) / static_cast<double>(c.size() - n + 1);
    }
    std::size_t best = refs.front().size();
    for (const auto &r : refs) {
        auto gap = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
        if (gap(r.size()) < gap(best) || (gap(r.size()) == gap(best) && r.size() < best)) best = r.size();
    }
    const double cl = static_cast<double>(c.size());
    const double rl = static_cast<double>(best);
    const double bp = cl > rl ? 1.0 : std::exp(1.0 - rl / cl);
    return bp * std::pow(product, 1.0 / static_cast<double>(order));
}

/// Longest common subsequence by trying every subset of `a`.
inline std::size_t lcs(const Sentence &a, const Sentence &b) {
    std::size_t best = 0;
    for (unsigned long mask = 0; mask < (1ul << a.size()); ++mask) {
        std::size_t j = 0, size = 0;
        bool ok = true;
        for (std::size_t i = 0; i < a.size() && ok; ++i) {
            if (!(mask & (1ul << i))) continue;
            while (j < b.size() && b[j] != a[i]) ++j;
            if (j == b.size()) ok = false;
            else {
                ++j;
                ++size;
            }
        }
        if (ok) best = std::max(best, size);
    }
    return best;
}

inline double rouge_l(const Sentence &c, const Sentence &r) {
    if (c.empty() || r.empty()) return 0.0;
    const double l = static_cast<double>(lcs(c, r));
    if (l == 0) return 0.0;
    const double p = l / static_cast<double>(c.size());
    const double rec = l / static_cast<double>(r.size());
    return 2 * p * rec / (p + rec);
}

struct Alignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

/// Every one-to-one exact alignment; most matches, then fewest chunks.
inline Alignment meteor_alignment(const Sentence &c, const Sentence &r) {
    Alignment best;
    bool have = false;
    std::vector<long> to(c.size(), -1);
    std::vector<bool> used(r.size(), false);
    std::function<void(std::size_t)> visit = [&](std::size_t i) {
        if (i == c.size()) {
            Alignment a;
            long prev_c = -2, prev_r = -2;
            for (std::size_t k = 0; k < c.size(); ++k) {
                if (to[k] < 0) continue;
                ++a.matches;
                if (!(static_cast<long>(k) == prev_c + 1 && to[k] == prev_r + 1)) ++a.chunks;
                prev_c = static_cast<long>(k);
                prev_r = to[k];
            }
            if (!have || a.matches > best.matches || (a.matches == best.matches && a.chunks < best.chunks)) {
                best = a;
                have = true;
            }
            return;
        }
        visit(i + 1);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (!used[j] && r[j] == c[i]) {
                used[j] = true;
                to[i] = static_cast<long>(j);
                visit(i + 1);
                to[i] = -1;
                used[j] = false;
            }
        }
    };
    visit(0);
    return best;
}

inline double meteor(const Sentence &c, const Sentence &r, double alpha = 0.9, double beta = 3.0,
                     double gamma = 0.5) {
    Alignment a = meteor_alignment(c, r);
    if (a.matches == 0) return 0.0;
    const double m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(c.size());
    const double rec = m / static_cast<double>(r.size());
    const double fmean = p * rec / (alpha * p + (1 - alpha) * rec);
    return fmean * (1 - gamma * std::pow(static_cast<double>(a.chunks) / m, beta));
}

// ---------------------------------------------------------------------------
// Sentence enumeration over {a, b, c, d}

inline const std::vector<std::string> &alphabet() {
    static const std::vector<std::string> letters = {"a", "b", "c", "d"};
    return letters;
}

/// Every sentence of length 0..max_len.
inline std::vector<Sentence> all_sentences(std::size_t max_len) {
    std::vector<Sentence> out{{}};
    std::vector<Sentence> frontier{{}};
    for (std::size_t len = 1; len <= max_len; ++len) {
        std::vector<Sentence> next;
        for (const auto &s : frontier) {
            for (const auto &t : alphabet()) {
                Sentence e = s;
                e.push_back(t);
                next.push_back(e);
            }
        }
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

/// One representative pair per orbit of the alphabet's permutation group:
/// the candidate followed by the reference, read as a word, is a restricted
/// growth string (each new letter is the next unused one). The metrics only
/// compare tokens for equality, so they are constant on these orbits.
inline void for_each_canonical_pair(std::size_t max_len, const std::function<void(const Sentence &, const Sentence &)> &f) {
    const auto &letters = alphabet();
    for (std::size_t lc = 0; lc <= max_len; ++lc) {
        for (std::size_t lr = 0; lr <= max_len; ++lr) {
            const std::size_t total = lc + lr;
            std::vector<int> word(total, 0);
            std::function<void(std::size_t, int)> grow = [&](std::size_t i, int highest) {
                if (i == total) {
                    Sentence c, r;
                    for (std::size_t k = 0; k < total; ++k) {
                        (k < lc ? c : r).push_back(letters[static_cast<std::size_t>(word[k])]);
                    }
                    f(c, r);
                    return;
                }
                for (int v = 0; v <= std::min(highest + 1, static_cast<int>(letters.size()) - 1); ++v) {
                    word[i] = v;
                    grow(i + 1, std::max(highest, v));
                }
            };
            grow(0, -1);
        }
    }
}

/// Orbit size of a canonical pair: the number of injective relabelings of
/// the letters it uses.
inline std::size_t orbit_size(const Sentence &c, const Sentence &r) {
    std::vector<std::string> used;
    for (const auto *s : {&c, &r}) {
        for (const auto &t : *s) {
            if (std::find(used.begin(), used.end(), t) == used.end()) used.push_back(t);
        }
    }
    std::size_t size = 1;
    for (std::size_t k = 0; k < used.size(); ++k) size *= alphabet().size() - k;
    return size;
}

} // namespace muscap::oracle
