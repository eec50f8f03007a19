#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dpt/optim.hpp"

namespace dpt {

// Checkpoint container, all integers little-endian:
//   magic "DPTK" | u32 version=1 | u32 record count
//   per record: u16 name length | UTF-8 name | u8 rank | u32 extent per axis
//               | fp32 little-endian row-major payload
// Records are written in registry order, so identical runs produce
// byte-identical files. The same record layout backs the dataset binary cache.

void write_records(std::ostream& os, const std::vector<Parameter>& records);
std::vector<Parameter> read_records(std::istream& is, const std::string& origin);

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params);

// Loads into an existing parameter list; every name must match with identical
// shape, and the file may contain no extras. Diagnostics name the offender.
void load_checkpoint(const std::string& path, std::vector<Parameter>& params);

}  // namespace dpt
