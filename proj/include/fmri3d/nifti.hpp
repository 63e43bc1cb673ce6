#pragma once

// Single-file NIfTI-1 (.nii, .nii.gz) reading and writing.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "fmri3d/tensor.hpp"

namespace fmri3d::data {

enum class NiftiType : std::int16_t { U8 = 2, I16 = 4, I32 = 8, F32 = 16, F64 = 64 };

struct NiftiHeader {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false;
};

namespace detail {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kOffDim = 40;
inline constexpr std::size_t kOffDatatype = 70;
inline constexpr std::size_t kOffBitpix = 72;
inline constexpr std::size_t kOffVoxOffset = 108;
inline constexpr std::size_t kOffSclSlope = 112;
inline constexpr std::size_t kOffSclInter = 116;
inline constexpr std::size_t kOffMagic = 344;

inline bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error(ErrorKind::Io, "inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorKind::TruncatedFile, "corrupt or truncated gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error(ErrorKind::TruncatedFile, "gzip stream ended early");
    }
  }
  inflateEnd(&zs);
  return out;
}

inline std::vector<std::uint8_t> gzip(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  // mtime stays zero, so identical input yields identical bytes
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw Error(ErrorKind::Io, "deflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = deflate(&zs, Z_FINISH);
    if (rc == Z_STREAM_ERROR) {
      deflateEnd(&zs);
      throw Error(ErrorKind::Io, "deflate failed");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  }
  deflateEnd(&zs);
  return out;
}

template <class U>
U load(std::span<const std::uint8_t> bytes, std::size_t off, bool swap) {
  std::array<std::uint8_t, sizeof(U)> raw{};
  std::memcpy(raw.data(), bytes.data() + off, sizeof(U));
  if (swap) std::reverse(raw.begin(), raw.end());
  return std::bit_cast<U>(raw);
}

template <class U>
void store(std::vector<std::uint8_t>& bytes, std::size_t off, U v, bool big_endian) {
  auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(U)>>(v);
  if (big_endian != (std::endian::native == std::endian::big)) std::reverse(raw.begin(), raw.end());
  std::memcpy(bytes.data() + off, raw.data(), sizeof(U));
}

inline std::size_t type_size(std::int16_t datatype) {
  switch (static_cast<NiftiType>(datatype)) {
    case NiftiType::U8: return 1;
    case NiftiType::I16: return 2;
    case NiftiType::I32: return 4;
    case NiftiType::F32: return 4;
    case NiftiType::F64: return 8;
  }
  throw Error(ErrorKind::UnsupportedDatatype, "NIfTI datatype code " + std::to_string(datatype));
}

}  // namespace detail

struct NiftiVolume {
  NiftiHeader header;
  Tensor<double> data;  // [T, D, H, W]; x varies fastest (W), then y (H), z (D), t
};

/// Parses an in-memory .nii or .nii.gz (gzip detected from its magic bytes).
inline NiftiVolume read_nifti(std::span<const std::uint8_t> input) {
  std::vector<std::uint8_t> inflated;
  std::span<const std::uint8_t> bytes = input;
  if (detail::is_gzip(input)) {
    inflated = detail::gunzip(input);
    bytes = inflated;
  }
  if (bytes.size() < detail::kHeaderSize) throw Error(ErrorKind::TruncatedFile, "shorter than a NIfTI-1 header");

  NiftiHeader h;
  const auto raw_size = detail::load<std::int32_t>(bytes, 0, false);
  if (raw_size == 348) {
    h.big_endian = std::endian::native == std::endian::big;
  } else if (detail::load<std::int32_t>(bytes, 0, true) == 348) {
    h.big_endian = std::endian::native != std::endian::big;
  } else if (raw_size == 540 || detail::load<std::int32_t>(bytes, 0, true) == 540) {
    throw Error(ErrorKind::BadMagic, "NIfTI-2 files are not supported");
  } else {
    throw Error(ErrorKind::BadMagic, "sizeof_hdr is not 348");
  }
  const bool swap = raw_size != 348;
  std::memcpy(h.magic.data(), bytes.data() + detail::kOffMagic, 4);
  const std::string magic(h.magic.data(), 3);
  if (magic == "ni1" && h.magic[3] == '\0')
    throw Error(ErrorKind::BadMagic, "ni1 header/image pairs are not supported; use single-file .nii");
  if (magic != "n+1" || h.magic[3] != '\0') throw Error(ErrorKind::BadMagic, "magic is not \"n+1\"");

  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = detail::load<std::int16_t>(bytes, detail::kOffDim + 2 * i, swap);
  h.datatype = detail::load<std::int16_t>(bytes, detail::kOffDatatype, swap);
  h.bitpix = detail::load<std::int16_t>(bytes, detail::kOffBitpix, swap);
  h.vox_offset = detail::load<float>(bytes, detail::kOffVoxOffset, swap);
  h.scl_slope = detail::load<float>(bytes, detail::kOffSclSlope, swap);
  h.scl_inter = detail::load<float>(bytes, detail::kOffSclInter, swap);

  const int rank = h.dim[0];
  if (rank < 3 || rank > 7) throw Error(ErrorKind::RankError, "NIfTI dim[0] = " + std::to_string(rank));
  for (int a = 1; a <= rank; ++a)
    if (h.dim[a] < 1) throw Error(ErrorKind::ShapeMismatch, "non-positive NIfTI extent on axis " + std::to_string(a));
  for (int a = 5; a <= rank; ++a)
    if (h.dim[a] != 1) throw Error(ErrorKind::RankError, "NIfTI volumes beyond 4D are not supported");
  const std::size_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  const std::size_t nt = rank >= 4 ? static_cast<std::size_t>(h.dim[4]) : 1;
  const std::size_t elem = detail::type_size(h.datatype);
  const std::size_t count = nx * ny * nz * nt;
  if (!(h.vox_offset >= 0.0f)) throw Error(ErrorKind::TruncatedFile, "negative vox_offset");
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < detail::kHeaderSize || bytes.size() < offset + count * elem)
    throw Error(ErrorKind::TruncatedFile, "voxel data needs " + std::to_string(offset + count * elem) + " bytes, have " +
                                              std::to_string(bytes.size()));

  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = offset + i * elem;
    switch (static_cast<NiftiType>(h.datatype)) {
      case NiftiType::U8: values[i] = bytes[at]; break;
      case NiftiType::I16: values[i] = detail::load<std::int16_t>(bytes, at, swap); break;
      case NiftiType::I32: values[i] = detail::load<std::int32_t>(bytes, at, swap); break;
      case NiftiType::F32: values[i] = detail::load<float>(bytes, at, swap); break;
      case NiftiType::F64: values[i] = detail::load<double>(bytes, at, swap); break;
    }
  }
  if (h.scl_slope != 0.0f) {
    const double slope = h.scl_slope, inter = h.scl_inter;
    for (auto& v : values) v = v * slope + inter;
  }
  return {h, Tensor<double>(Shape{nt, nz, ny, nx}, std::move(values))};
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline NiftiVolume read_nifti_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return read_nifti(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

struct NiftiWriteOptions {
  NiftiType datatype = NiftiType::F32;
  bool big_endian = false;
  bool gzip = false;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
};

/// Encodes a [T, D, H, W] or [D, H, W] tensor. Values are stored as given
/// (no inverse scaling is applied when a slope is set).
inline std::vector<std::uint8_t> write_nifti(const Tensor<double>& volume, const NiftiWriteOptions& opt = {}) {
  std::size_t nt = 1, nz, ny, nx;
  if (volume.rank() == 4) {
    nt = volume.shape()[0], nz = volume.shape()[1], ny = volume.shape()[2], nx = volume.shape()[3];
  } else if (volume.rank() == 3) {
    nz = volume.shape()[0], ny = volume.shape()[1], nx = volume.shape()[2];
  } else {
    throw Error(ErrorKind::RankError, "NIfTI writer expects rank 3 or 4, got " + volume.shape().str());
  }
  const std::size_t elem = detail::type_size(static_cast<std::int16_t>(opt.datatype));
  std::vector<std::uint8_t> out(352 + volume.size() * elem, 0);
  const bool be = opt.big_endian;
  detail::store<std::int32_t>(out, 0, 348, be);
  const std::int16_t rank = volume.rank() == 4 ? 4 : 3;
  std::array<std::int16_t, 8> dim{rank, static_cast<std::int16_t>(nx), static_cast<std::int16_t>(ny),
                                  static_cast<std::int16_t>(nz), static_cast<std::int16_t>(nt), 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) detail::store<std::int16_t>(out, detail::kOffDim + 2 * i, dim[i], be);
  detail::store<std::int16_t>(out, detail::kOffDatatype, static_cast<std::int16_t>(opt.datatype), be);
  detail::store<std::int16_t>(out, detail::kOffBitpix, static_cast<std::int16_t>(8 * elem), be);
  for (std::size_t i = 0; i < 8; ++i) detail::store<float>(out, 76 + 4 * i, 1.0f, be);
  detail::store<float>(out, detail::kOffVoxOffset, 352.0f, be);
  detail::store<float>(out, detail::kOffSclSlope, opt.scl_slope, be);
  detail::store<float>(out, detail::kOffSclInter, opt.scl_inter, be);
  std::memcpy(out.data() + detail::kOffMagic, "n+1\0", 4);
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const std::size_t at = 352 + i * elem;
    const double v = volume[i];
    switch (opt.datatype) {
      case NiftiType::U8: out[at] = static_cast<std::uint8_t>(v); break;
      case NiftiType::I16: detail::store<std::int16_t>(out, at, static_cast<std::int16_t>(v), be); break;
      case NiftiType::I32: detail::store<std::int32_t>(out, at, static_cast<std::int32_t>(v), be); break;
      case NiftiType::F32: detail::store<float>(out, at, static_cast<float>(v), be); break;
      case NiftiType::F64: detail::store<double>(out, at, v, be); break;
    }
  }
  if (opt.gzip) return detail::gzip(out);
  return out;
}

inline void write_nifti_file(const std::string& path, const Tensor<double>& volume, const NiftiWriteOptions& opt = {}) {
  const auto bytes = write_nifti(volume, opt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace fmri3d::data
