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
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace muscap {

// 64-bit FNV-1a. Used for parameter fingerprints and config digests, never for
// anything security related.
class Fnv1a64 {
  public:
    Fnv1a64 &update(std::span<const std::byte> bytes) {
        for (std::byte b : bytes) {
            state_ ^= static_cast<std::uint64_t>(b);
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fnv1a64 &update(std::string_view text) { return update(std::as_bytes(std::span(text))); }

    Fnv1a64 &update(const Eigen::MatrixXd &m) {
        const std::int64_t shape[2] = {m.rows(), m.cols()};
        update(std::as_bytes(std::span(shape)));
        return update(std::as_bytes(std::span(m.data(), static_cast<std::size_t>(m.size()))));
    }

    std::uint64_t value() const { return state_; }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
        return buf;
    }

  private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

} // namespace muscap
