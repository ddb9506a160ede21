// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace ehrfuse::io {

// Shortest decimal string that round-trips the double; deterministic for
// identical bits, so rerun outputs compare byte-identical.
std::string fmt(double x);

// Fixed little-endian binary primitives for the checkpoint/state containers.
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
void write_str(std::ostream& os, const std::string& s);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_str(std::istream& is);

}  // namespace ehrfuse::io
