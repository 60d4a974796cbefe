#include "axial/attention.hpp"

namespace axial {

namespace {
std::uint64_t ipow(std::uint64_t base, unsigned exp) {
  std::uint64_t r = 1;
  for (unsigned i = 0; i < exp; ++i) r *= base;
  return r;
}
}  // namespace

std::uint64_t pair_count(std::uint64_t extent, unsigned rank, AttentionMode mode) {
  if (extent < 1 || rank < 1) throw UsageError("pair_count needs extent >= 1 and rank >= 1");
  return mode == AttentionMode::full ? ipow(extent, 2 * rank) : ipow(extent, rank + 1);
}

}  // namespace axial
