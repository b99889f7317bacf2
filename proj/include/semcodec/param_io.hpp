#pragma once

// Named parameter table used inside checkpoint files:
//   count u32 LE, then per parameter: name length u16 LE, UTF-8 name,
//   rank u8, dims u32 LE each, values as 32-bit IEEE-754 LE.

#include <span>
#include <vector>

#include "semcodec/byte_io.hpp"
#include "semcodec/network.hpp"

namespace semcodec {

void write_param_table(ByteWriter& w, std::span<const Parameter> params);
std::vector<Parameter> read_param_table(ByteReader& r);

// Rounds every value to the nearest float so a save/load cycle is exact.
void round_to_f32(std::span<Parameter> params);

// Copies values by name; every destination name must be present in `src`
// with an identical shape.
void assign_params(std::span<Parameter> dst, std::span<const Parameter> src);

} // namespace semcodec
