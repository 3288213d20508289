#pragma once

#include <iosfwd>

#include "faultformer/tensor.hpp"

namespace faultformer {

// Flat binary layout: u32 rank, u32 dims[rank], f64 values[prod(dims)], all
// little-endian.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t value);
std::uint32_t read_u32(std::istream& in);

}  // namespace faultformer
