#include "otalign/rng.hpp"

namespace otalign {

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k < 0 || k > n)
    throw ValidationError("sample_without_replacement: k outside [0,n]");
  // Partial Fisher-Yates over an index pool.
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    std::size_t j =
        i + static_cast<std::size_t>(uniform_index(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace otalign
