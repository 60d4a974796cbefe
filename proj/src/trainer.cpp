#include "axial/trainer.hpp"

#include <fstream>
#include <sstream>

#include "axial/rng.hpp"

namespace axial {

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "stripes") return SynthKind::stripes;
  if (name == "gradients") return SynthKind::gradients;
  if (name == "shifted-constant-video" || name == "shifted_constant_video" || name == "video") {
    return SynthKind::shifted_constant_video;
  }
  throw UsageError("unknown dataset kind '" + name + "' (expected stripes, gradients, shifted-constant-video)");
}

const char* synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::stripes: return "stripes";
    case SynthKind::gradients: return "gradients";
    case SynthKind::shifted_constant_video: return "shifted-constant-video";
  }
  return "unknown";
}

void Dataset::validate() const {
  if (train.empty() || valid.empty()) throw UsageError("dataset splits must be non-empty");
  const Shape expected{height, width, channels};
  for (const auto* split : {&train, &valid}) {
    for (const auto& img : *split) {
      if (img.shape() != expected) {
        throw UsageError("dataset image of shape " + shape_string(img.shape()) + ", expected " +
                         shape_string(expected));
      }
      for (auto v : img.values()) {
        if (v < 0 || v >= vocab) throw UsageError("dataset symbol " + std::to_string(v) + " outside [0, V)");
      }
    }
  }
}

namespace {

DataTensor make_image(SynthKind kind, Index h, Index w, Index c, Index v, Index period, Rng& rng) {
  DataTensor img({h, w, c});
  switch (kind) {
    case SynthKind::stripes: {
      const Index phase = rng.uniform_int(period);
      for (Index i = 0; i < h; ++i) {
        for (Index k = 0; k < c; ++k) {
          const Index level = ((i + phase + k) % period) * v / period;
          for (Index j = 0; j < w; ++j) img(i, j, k) = static_cast<std::int32_t>(level);
        }
      }
      break;
    }
    case SynthKind::gradients: {
      Index a = rng.uniform_int(2), b = rng.uniform_int(2);
      if (a == 0 && b == 0) b = 1;
      const Index offset = rng.uniform_int(v);
      for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
          for (Index k = 0; k < c; ++k) img(i, j, k) = static_cast<std::int32_t>((a * i + b * j + offset + k) % v);
        }
      }
      break;
    }
    case SynthKind::shifted_constant_video: {
      for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) img(i, j, 0) = static_cast<std::int32_t>(rng.uniform_int(v));
      }
      for (Index k = 1; k < c; ++k) {
        for (Index i = 0; i < h; ++i) {
          for (Index j = 0; j < w; ++j) img(i, j, k) = img(i, (j + w - 1) % w, k - 1);
        }
      }
      break;
    }
  }
  return img;
}

}  // namespace

Dataset synth_dataset(SynthKind kind, Index height, Index width, Index channels, Index vocab, Index n,
                      std::uint64_t seed, Index period) {
  if (height <= 0 || width <= 0 || channels <= 0 || vocab <= 0 || n <= 0 || period <= 0) {
    throw UsageError("synth_dataset parameters must be positive");
  }
  Dataset d{height, width, channels, vocab, {}, {}};
  Rng rng(seed);
  for (Index k = 0; k < n; ++k) d.train.push_back(make_image(kind, height, width, channels, vocab, period, rng));
  for (Index k = 0; k < std::max<Index>(1, n / 4); ++k) {
    d.valid.push_back(make_image(kind, height, width, channels, vocab, period, rng));
  }
  return d;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw UsageError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": expected path<TAB>split");
    }
    std::filesystem::path p = line.substr(0, tab);
    if (p.is_relative()) p = manifest.parent_path() / p;
    out.push_back({p, line.substr(tab + 1)});
  }
  return out;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries) {
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  std::ofstream out(manifest);
  if (!out) throw FormatError("cannot write " + manifest.string());
  for (const auto& e : entries) out << e.path.generic_string() << '\t' << e.split << '\n';
}

std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  data.validate();
  std::filesystem::create_directories(dir);
  save_data_tensors(dir / "train.axt", data.train);
  save_data_tensors(dir / "valid.axt", data.valid);
  const auto manifest = dir / "manifest.tsv";
  write_manifest(manifest, {{"train.axt", "train"}, {"valid.axt", "valid"}});
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  Dataset d;
  for (const auto& entry : read_manifest(manifest)) {
    auto images = load_data_tensors(entry.path);
    auto& split = entry.split == "train" ? d.train : entry.split == "valid" ? d.valid : d.train;
    if (entry.split != "train" && entry.split != "valid") {
      throw FormatError("unknown split '" + entry.split + "' in " + manifest.string());
    }
    for (auto& img : images) split.push_back(std::move(img));
  }
  const auto& first = !d.train.empty() ? d.train.front() : !d.valid.empty() ? d.valid.front() : DataTensor();
  if (first.rank() != 3) throw UsageError("dataset images must be H x W x C");
  d.height = first.extent(0);
  d.width = first.extent(1);
  d.channels = first.extent(2);
  Index vmax = 0;
  for (const auto* split : {&d.train, &d.valid}) {
    for (const auto& img : *split) {
      for (auto v : img.values()) vmax = std::max<Index>(vmax, v);
    }
  }
  d.vocab = vmax + 1;
  d.validate();
  return d;
}

ModelConfig checkpoint_config(const NamedTensors& records) {
  return ModelConfig::from_record(as_data(records.at("config")));
}

std::int64_t checkpoint_step(const NamedTensors& records) {
  const auto* r = records.find("train.step");
  if (!r) return 0;
  const DataTensor s = as_data(*r);
  return static_cast<std::int64_t>(s[0]) | (static_cast<std::int64_t>(s[1]) << 31);
}

DType checkpoint_dtype(const std::filesystem::path& path) {
  const NamedTensors records = load_container(path);
  for (const auto& [name, tensor] : records.records) {
    if (name.rfind("param/", 0) != 0) continue;
    if (std::holds_alternative<Tensor<double>>(tensor)) return DType::real64;
    if (std::holds_alternative<Tensor<float>>(tensor)) return DType::real32;
  }
  throw FormatError("checkpoint holds no parameters");
}

std::string format_metrics_row(const MetricsRow& row) {
  std::ostringstream os;
  os.precision(8);
  os << row.step << ',' << row.train_bits << ',' << row.valid_bits << ',' << row.wall_ms;
  return os.str();
}

}  // namespace axial
