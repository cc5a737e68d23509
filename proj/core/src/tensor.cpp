#include "winnorm/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>

namespace winnorm {

std::string Dims::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <typename T>
void require_finite(std::span<const T> values, const char* where) {
  // Exponent bits all set means Inf or NaN; the branch-free OR reduction vectorizes.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr auto exponent = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & exponent) == exponent);
  if (bad == 0) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DegenerateInputError(std::string(where) + " produced a non-finite value at element " + std::to_string(i));
    }
  }
}

template void require_finite<float>(std::span<const float>, const char*);
template void require_finite<double>(std::span<const double>, const char*);

}  // namespace winnorm
