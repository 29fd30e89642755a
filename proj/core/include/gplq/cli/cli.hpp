// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gplq/pipeline/config.hpp"

namespace gplq::cli {

// Reads and strictly parses a JSON config file.
pipeline::PipelineConfig load_config(const std::filesystem::path& path);

// <out>/<config hash>-s<seed>
std::filesystem::path run_directory(const std::filesystem::path& out,
                                    const pipeline::PipelineConfig& cfg);

/// Entry point behind the `gplq` executable; `args` excludes the program
/// name. Returns 0 on success, 2 on a
/// usage error and 1 on any other failure; failures print one line
/// `gplq: error[<kind>]: <message>` to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace gplq::cli
