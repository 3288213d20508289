#include "faultformer/serialize.hpp"

#include <array>
#include <bit>
#include <istream>
#include <ostream>

#include "faultformer/errors.hpp"

namespace faultformer {
namespace {

template <typename U>
void write_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw ParseError("unexpected end of tensor stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t value) { write_le(out, value); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }

void write_tensor(std::ostream& out, const Tensor& tensor) {
  write_le(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) write_le(out, static_cast<std::uint32_t>(d));
  for (double v : tensor.data()) write_le(out, std::bit_cast<std::uint64_t>(v));
}

Tensor read_tensor(std::istream& in) {
  const auto rank = read_le<std::uint32_t>(in);
  if (rank < 1 || rank > 3) throw ParseError("tensor rank " + std::to_string(rank) + " outside 1..3");
  Shape shape(rank);
  for (auto& d : shape) d = read_le<std::uint32_t>(in);
  std::vector<double> values(numel_of(shape));
  for (auto& v : values) v = std::bit_cast<double>(read_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace faultformer
