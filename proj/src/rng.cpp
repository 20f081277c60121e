#include "bem/common.hpp"

#include <zlib.h>

namespace bem {

Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint32_t name_hash = crc32(name.data(), name.size());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), name_hash};
  return Rng(seq);
}

void fill_normal(Rng& rng, Eigen::Ref<Vector> out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index k = 0; k < out.size(); ++k) out[k] = normal(rng);
}

std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t crc) {
  return static_cast<std::uint32_t>(
      ::crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

}  // namespace bem
