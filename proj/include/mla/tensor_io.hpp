#pragma once

#include <iosfwd>
#include <string>

#include "mla/tensor.hpp"

namespace mla {

// MLT1 binary tensor record: magic "MLT1", u8 dtype code (0 = f32, 1 = f64),
// u32 rank, u32 per-dim sizes, row-major payload. All integers and payload
// words little-endian. Checkpoints store a sequence of these records.
void write_mlt1(std::ostream& out, const Tensor& t);
Tensor read_mlt1(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace mla
