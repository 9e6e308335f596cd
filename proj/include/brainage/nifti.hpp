#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "brainage/volume.hpp"

namespace brainage {

/// NIfTI-1 datatype codes accepted on read.
enum class NiftiDatatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

inline constexpr int kNiftiHeaderSize = 348;
inline constexpr int kNiftiDataOffset = 352;

struct NiftiHeader {
  std::int32_t sizeof_hdr = kNiftiHeaderSize;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = kNiftiDataOffset;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  std::endian byte_order = std::endian::little;
  // Orientation and descriptive fields are not interpreted; the raw header is kept as-is.
  std::array<std::uint8_t, kNiftiHeaderSize> raw{};
};

struct NiftiImage {
  NiftiHeader header;
  Volume volume;
};

/// Decodes a single-file NIfTI-1 stream, gzip-compressed or not.
///
/// Voxels are converted to float with scl_slope/scl_inter applied when the slope is nonzero.
/// Throws Error with BadMagic, UnsupportedDatatype, Truncated or NonFinite.
NiftiImage parse_nifti(std::span<const std::uint8_t> bytes);

NiftiImage read_nifti(const std::filesystem::path& path);

/// Encodes a float32 single-file NIfTI-1 stream (vox_offset 352, slope 1, intercept 0).
std::vector<std::uint8_t> encode_nifti(const Volume& volume,
                                       std::endian order = std::endian::little);

/// Writes encode_nifti(volume) to path atomically. Throws IoFailure.
void write_nifti(const Volume& volume, const std::filesystem::path& path);

}  // namespace brainage
