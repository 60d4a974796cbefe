#pragma once

// AXT1 binary tensor files.
//
//   tensor    := "AXT1" u8:dtype u8:rank u32le:extent*rank payload(le)
//   container := "AXT1" u8:0xC0 u8:version u32le:count record*count
//   record    := u32le:name_length name tensor
//
// A plain tensor file may hold several tensors back to back.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "axial/tensor.hpp"

namespace axial {

enum class DType : std::uint8_t { real64 = 0, real32 = 1, int32 = 2 };

inline constexpr std::uint8_t kContainerTag = 0xC0;
inline constexpr std::uint8_t kContainerVersion = 1;

template <typename Scalar>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<Scalar, double>) return DType::real64;
  else if constexpr (std::is_same_v<Scalar, float>) return DType::real32;
  else return DType::int32;
}

const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

using AnyTensor = std::variant<Tensor<double>, Tensor<float>, DataTensor>;

void write_tensor(std::ostream& os, const AnyTensor& tensor);
AnyTensor read_tensor(std::istream& is);

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& tensor) {
  write_tensor(os, AnyTensor(tensor));
}

/// Extracts a real tensor, converting between real32 and real64.
template <typename Scalar>
Tensor<Scalar> as_real(const AnyTensor& any) {
  if (const auto* d = std::get_if<Tensor<double>>(&any)) return d->template cast<Scalar>();
  if (const auto* f = std::get_if<Tensor<float>>(&any)) return f->template cast<Scalar>();
  throw FormatError("expected a real tensor, found int32");
}

DataTensor as_data(const AnyTensor& any);

void save_tensors(const std::filesystem::path& path, const std::vector<AnyTensor>& tensors);
std::vector<AnyTensor> load_tensors(const std::filesystem::path& path);

void save_data_tensors(const std::filesystem::path& path, const std::vector<DataTensor>& tensors);
std::vector<DataTensor> load_data_tensors(const std::filesystem::path& path);

/// Ordered name -> tensor records.
struct NamedTensors {
  std::vector<std::pair<std::string, AnyTensor>> records;

  const AnyTensor* find(const std::string& name) const;
  const AnyTensor& at(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const NamedTensors& container);

/// Parses the whole file before returning; a malformed file never yields a
/// partially filled container.
NamedTensors load_container(const std::filesystem::path& path);

}  // namespace axial
