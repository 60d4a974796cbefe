#include "axial/model.hpp"

#include <sstream>

namespace axial {

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(height, "H");
  positive(width, "W");
  positive(channels, "C");
  positive(vocab, "V");
  positive(embed_dim, "D");
  positive(ffn_factor, "ffn_factor");
  positive(heads, "heads");
  if (embed_dim % heads != 0) throw ConfigError("heads must divide D");
  if (encoder_layers < 0 || upper_layers < 0 || row_layers < 0) throw ConfigError("layer counts must be >= 0");
  if (upper_layers % 2 != 0) throw ConfigError("L_upper must be even (row + column pairs)");
  if (encoder_layers % 2 != 0) throw ConfigError("L_enc must be even (alternating row/column)");
}

DataTensor ModelConfig::to_record() const {
  return DataTensor({11}, std::vector<std::int32_t>{
                              static_cast<std::int32_t>(height), static_cast<std::int32_t>(width),
                              static_cast<std::int32_t>(channels), static_cast<std::int32_t>(vocab),
                              static_cast<std::int32_t>(embed_dim), static_cast<std::int32_t>(ffn_factor),
                              static_cast<std::int32_t>(heads), static_cast<std::int32_t>(encoder_layers),
                              static_cast<std::int32_t>(upper_layers), static_cast<std::int32_t>(row_layers),
                              upper_context ? 1 : 0});
}

ModelConfig ModelConfig::from_record(const DataTensor& r) {
  if (r.size() != 11) throw FormatError("config record has " + std::to_string(r.size()) + " fields, expected 11");
  ModelConfig c;
  c.height = r[0];
  c.width = r[1];
  c.channels = r[2];
  c.vocab = r[3];
  c.embed_dim = r[4];
  c.ffn_factor = r[5];
  c.heads = r[6];
  c.encoder_layers = r[7];
  c.upper_layers = r[8];
  c.row_layers = r[9];
  c.upper_context = r[10] != 0;
  c.validate();
  return c;
}

std::string describe(const ModelConfig& c) {
  std::ostringstream os;
  os << c.height << 'x' << c.width << 'x' << c.channels << " V=" << c.vocab << " D=" << c.embed_dim
     << " D'=" << c.hidden_dim() << " heads=" << c.heads << " L_enc=" << c.encoder_layers
     << " L_upper=" << c.upper_layers << " L_row=" << c.row_layers;
  if (!c.upper_context) os << " (row-only)";
  return os.str();
}

DataTensor channel_plane(const DataTensor& x, Index c) {
  if (x.rank() != 3 || c < 0 || c >= x.extent(2)) throw UsageError("channel_plane: bad channel index");
  const Index h = x.extent(0), w = x.extent(1), cc = x.extent(2);
  DataTensor out({h, w});
  for (Index p = 0; p < h * w; ++p) out[p] = x[p * cc + c];
  return out;
}

}  // namespace axial
