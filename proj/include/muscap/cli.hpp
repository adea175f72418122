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

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace muscap {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,    // configuration, validation and argument errors
    kExitRuntime = 3,  // numerical, I/O and other runtime failures
    kExitExternal = 4, // chat service failures
};

/// Maps an exception to its exit code.
int exit_code_for(const std::exception &e);

/// Entry point behind the `muscap` binary. `args` excludes the program name.
/// Subcommands: train, caption, chain, eval, inspect-config, lm-serve,
/// make-fixture.
int run_cli(const std::vector<std::string> &args, std::istream &in, std::ostream &out, std::ostream &err);

/// Writes a small self-contained dataset (tones, manifest, vocabularies, a
/// 30 s song and a run config) into `dir`.
void write_fixture(const std::filesystem::path &dir);

} // namespace muscap
