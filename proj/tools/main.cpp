// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/cli/cli.hpp"

int main(int argc, char** argv) { return gplq::cli::run_cli(argc, argv); }
