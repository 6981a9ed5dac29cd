// DTEN tensor records.
//
// Layout: magic "DTEN", version byte 0x01, dtype byte (0x01 = f32,
// 0x02 = f64), rank byte, rank x u32 little-endian dims, then the row-major
// little-endian payload.
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "datforge/tensor.hpp"

namespace datforge::numerics {

inline constexpr char kDtenMagic[4] = {'D', 'T', 'E', 'N'};
inline constexpr std::uint8_t kDtenVersion = 0x01;

static_assert(std::endian::native == std::endian::little,
              "DTEN writer assumes a little-endian host");

template <std::floating_point T>
constexpr std::uint8_t dten_dtype_byte() {
  return sizeof(T) == sizeof(float) ? 0x01 : 0x02;
}

template <std::floating_point T>
void write_dten(std::ostream& out, const Tensor<T>& tensor, const std::string& context = "") {
  out.write(kDtenMagic, 4);
  const std::uint8_t version = kDtenVersion;
  const std::uint8_t dtype = dten_dtype_byte<T>();
  const std::uint8_t rank = static_cast<std::uint8_t>(tensor.rank());
  out.put(static_cast<char>(version));
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(rank));
  for (int i = 0; i < tensor.rank(); ++i) {
    const std::uint32_t d = static_cast<std::uint32_t>(tensor.dim(i));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  out.write(reinterpret_cast<const char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.size() * static_cast<std::int64_t>(sizeof(T))));
  if (!out) raise(ErrorKind::io, "failed writing DTEN record", context.empty() ? "" : " to ",
                  context);
}

template <std::floating_point T>
Tensor<T> read_dten(std::istream& in, const std::string& context = "") {
  auto fail = [&context](const char* what) {
    raise(ErrorKind::format, "DTEN ", what, context.empty() ? "" : " in ", context);
  };
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDtenMagic, 4) != 0) fail("bad magic");
  const int version = in.get();
  if (version != kDtenVersion) fail("unsupported version");
  const int dtype = in.get();
  if (dtype != dten_dtype_byte<T>()) fail("dtype mismatch");
  const int rank = in.get();
  if (rank < 0 || rank > 8) fail("bad rank");
  Shape shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (!in) fail("truncated header");
    shape[static_cast<std::size_t>(i)] = static_cast<int>(d);
  }
  const auto count = static_cast<std::size_t>(numel(shape));
  std::vector<T> data(count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) fail("truncated payload");
  return Tensor<T>::from(std::move(shape), std::move(data));
}

template <std::floating_point T>
void save_dten_file(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io, "cannot open for writing: ", path.string());
  write_dten(out, tensor, path.string());
}

template <std::floating_point T>
Tensor<T> load_dten_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io, "cannot open for reading: ", path.string());
  return read_dten<T>(in, path.string());
}

}  // namespace datforge::numerics
