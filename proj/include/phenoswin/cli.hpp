#pragma once

#include <filesystem>

#include "phenoswin/fractions.hpp"

namespace phenoswin {

/// Runs one subcommand; returns the process exit status.
int run_cli(int argc, char** argv);

/// Writes an 8-bit binary PGM class map.
void write_pgm(const std::filesystem::path& path, const LabelMap& map);
LabelMap read_pgm(const std::filesystem::path& path);

}  // namespace phenoswin
