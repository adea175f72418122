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

#include "muscap/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace muscap {

namespace {
std::mutex sink_mutex;
LogSink current_sink;
} // namespace

LogSink set_warning_sink(LogSink sink) {
    std::lock_guard lock(sink_mutex);
    return std::exchange(current_sink, std::move(sink));
}

void log_warning(std::string_view message) {
    std::lock_guard lock(sink_mutex);
    if (current_sink) {
        current_sink(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

} // namespace muscap
