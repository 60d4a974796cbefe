#include "axial/sampler.hpp"

#include <cmath>
#include <fstream>

namespace axial {

SamplerMode parse_sampler_mode(const std::string& name) {
  if (name == "naive") return SamplerMode::naive;
  if (name == "semi" || name == "semi_parallel" || name == "semi-parallel") return SamplerMode::semi_parallel;
  throw UsageError("unknown sampling mode '" + name + "' (expected naive or semi)");
}

std::uint64_t sampling_cost(const ModelConfig& cfg, SamplerMode mode) {
  if (cfg.height != cfg.width) throw UsageError("sampling_cost assumes a square image");
  const auto s = static_cast<std::uint64_t>(cfg.height);
  const std::uint64_t n = s * s;
  const auto layers = static_cast<std::uint64_t>(cfg.upper_layers + cfg.row_layers);
  const std::uint64_t semi = n * n * layers;
  return mode == SamplerMode::naive ? semi * s : semi;
}

void write_pnm(const std::filesystem::path& path, const DataTensor& image, Index vocab) {
  if (image.rank() != 3 || (image.extent(2) != 1 && image.extent(2) != 3)) {
    throw UsageError("PGM/PPM export needs C in {1, 3}");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  const Index h = image.extent(0), w = image.extent(1), c = image.extent(2);
  out << (c == 1 ? "P2" : "P3") << '\n' << w << ' ' << h << '\n' << std::max<Index>(1, vocab - 1) << '\n';
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      for (Index k = 0; k < c; ++k) {
        if (j || k) out << ' ';
        out << image(i, j, k);
      }
    }
    out << '\n';
  }
}

}  // namespace axial
