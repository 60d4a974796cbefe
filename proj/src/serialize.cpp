#include "axial/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace axial {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'X', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  std::array<char, sizeof(T)> buf{};
  if (!is.read(buf.data(), sizeof(T))) throw FormatError("AXT1: unexpected end of data");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(buf[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

void read_magic(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw FormatError("AXT1: file too short for magic");
  if (magic != kMagic) throw FormatError("AXT1: bad magic");
}

template <typename Scalar>
void write_payload(std::ostream& os, const Tensor<Scalar>& t) {
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(dtype_of<Scalar>()));
  if (t.rank() > 255) throw FormatError("AXT1: rank exceeds 255");
  os.put(static_cast<char>(t.rank()));
  for (Index e : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  for (Scalar v : t.values()) put_le<Scalar>(os, v);
}

template <typename Scalar>
Tensor<Scalar> read_payload(std::istream& is, std::uint8_t rank) {
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_le<std::uint32_t>(is);
    if (e == 0) throw FormatError("AXT1: zero extent");
  }
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = get_le<Scalar>(is);
  return t;
}

AnyTensor read_after_magic(std::istream& is) {
  const auto tag = get_le<std::uint8_t>(is);
  const auto rank = get_le<std::uint8_t>(is);
  switch (static_cast<DType>(tag)) {
    case DType::real64: return read_payload<double>(is, rank);
    case DType::real32: return read_payload<float>(is, rank);
    case DType::int32: return read_payload<std::int32_t>(is, rank);
  }
  throw FormatError("AXT1: unknown dtype tag " + std::to_string(tag));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling then rename so readers never see a torn file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::real64: return "real64";
    case DType::real32: return "real32";
    case DType::int32: return "int32";
  }
  return "unknown";
}

DType parse_dtype(const std::string& name) {
  if (name == "real64") return DType::real64;
  if (name == "real32") return DType::real32;
  if (name == "int32") return DType::int32;
  throw UsageError("unknown dtype '" + name + "' (expected real32 or real64)");
}

void write_tensor(std::ostream& os, const AnyTensor& tensor) {
  std::visit([&](const auto& t) { write_payload(os, t); }, tensor);
}

AnyTensor read_tensor(std::istream& is) {
  read_magic(is);
  return read_after_magic(is);
}

DataTensor as_data(const AnyTensor& any) {
  if (const auto* d = std::get_if<DataTensor>(&any)) return *d;
  throw FormatError("expected an int32 tensor");
}

void save_tensors(const std::filesystem::path& path, const std::vector<AnyTensor>& tensors) {
  std::ostringstream os(std::ios::binary);
  for (const auto& t : tensors) write_tensor(os, t);
  write_file(path, os.str());
}

std::vector<AnyTensor> load_tensors(const std::filesystem::path& path) {
  std::istringstream is(slurp(path), std::ios::binary);
  std::vector<AnyTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
  return out;
}

void save_data_tensors(const std::filesystem::path& path, const std::vector<DataTensor>& tensors) {
  std::vector<AnyTensor> any(tensors.begin(), tensors.end());
  save_tensors(path, any);
}

std::vector<DataTensor> load_data_tensors(const std::filesystem::path& path) {
  std::vector<DataTensor> out;
  for (const auto& t : load_tensors(path)) out.push_back(as_data(t));
  return out;
}

const AnyTensor* NamedTensors::find(const std::string& name) const {
  for (const auto& [key, value] : records) {
    if (key == name) return &value;
  }
  return nullptr;
}

const AnyTensor& NamedTensors::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw FormatError("missing record '" + name + "'");
}

void save_container(const std::filesystem::path& path, const NamedTensors& container) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(kContainerTag));
  os.put(static_cast<char>(kContainerVersion));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(container.records.size()));
  for (const auto& [name, tensor] : container.records) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
  write_file(path, os.str());
}

NamedTensors load_container(const std::filesystem::path& path) {
  std::istringstream is(slurp(path), std::ios::binary);
  read_magic(is);
  if (get_le<std::uint8_t>(is) != kContainerTag) throw FormatError("AXT1: not a container file");
  const auto version = get_le<std::uint8_t>(is);
  if (version != kContainerVersion) {
    throw FormatError("AXT1: unsupported container version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is);
  NamedTensors out;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("AXT1: truncated record name");
    out.records.emplace_back(std::move(name), read_tensor(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("AXT1: trailing bytes");
  return out;
}

}  // namespace axial
