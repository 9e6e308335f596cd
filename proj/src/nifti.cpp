#include "brainage/nifti.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include <zlib.h>

#include "brainage/error.hpp"
#include "brainage/io.hpp"

namespace brainage {

void validate(const Volume& v) {
  for (int d : v.dims)
    if (d < 1) fail(ErrorKind::ShapeMismatch, "volume extents must be >= 1");
  for (float s : v.spacing)
    if (!(s > 0.0f)) fail(ErrorKind::ShapeMismatch, "volume spacing must be > 0");
  if (v.data.size() != static_cast<std::size_t>(v.dims[0]) * v.dims[1] * v.dims[2])
    fail(ErrorKind::ShapeMismatch, "volume data length does not match extents");
  for (float x : v.data)
    if (!std::isfinite(x)) fail(ErrorKind::NonFinite, "volume holds a non-finite voxel");
}

namespace {

// Header field offsets within the 348-byte NIfTI-1 header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffMagic = 344;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, std::size_t offset, T value, bool swap) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  std::memcpy(out.data() + offset, raw.data(), sizeof(T));
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) fail(ErrorKind::IoFailure, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorKind::Truncated, "corrupt or truncated gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      fail(ErrorKind::Truncated, "gzip stream ended early");
    }
  }
  inflateEnd(&zs);
  return out;
}

int expected_bitpix(std::int16_t datatype) {
  switch (static_cast<NiftiDatatype>(datatype)) {
    case NiftiDatatype::UInt8: return 8;
    case NiftiDatatype::Int16: return 16;
    case NiftiDatatype::Int32: return 32;
    case NiftiDatatype::Float32: return 32;
    case NiftiDatatype::Float64: return 64;
  }
  return -1;
}

template <typename T>
std::vector<double> decode_payload(const ByteReader& reader, std::size_t offset, std::size_t count) {
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i)
    values[i] = static_cast<double>(reader.template get<T>(offset + i * sizeof(T)));
  return values;
}

}  // namespace

NiftiImage parse_nifti(std::span<const std::uint8_t> input) {
  std::vector<std::uint8_t> inflated;
  if (input.size() >= 2 && input[0] == 0x1f && input[1] == 0x8b) {
    inflated = gunzip(input);
    input = inflated;
  }
  if (input.size() < static_cast<std::size_t>(kNiftiHeaderSize))
    fail(ErrorKind::Truncated, "stream shorter than a NIfTI-1 header");

  std::int32_t raw_size;
  std::memcpy(&raw_size, input.data(), sizeof raw_size);
  bool swap;
  if (raw_size == kNiftiHeaderSize) {
    swap = false;
  } else if (ByteReader(input, true).get<std::int32_t>(0) == kNiftiHeaderSize) {
    swap = true;
  } else {
    fail(ErrorKind::BadMagic, "sizeof_hdr is not 348 in either byte order");
  }
  const ByteReader reader(input, swap);

  NiftiImage image;
  NiftiHeader& h = image.header;
  std::copy_n(input.begin(), kNiftiHeaderSize, h.raw.begin());
  h.byte_order = (std::endian::native == std::endian::little) != swap ? std::endian::little
                                                                        : std::endian::big;
  std::memcpy(h.magic.data(), input.data() + kOffMagic, 4);
  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0)
    fail(ErrorKind::BadMagic, "magic is not \"n+1\" (only single-file NIfTI-1 is supported)");

  for (int i = 0; i < 8; ++i) h.dim[i] = reader.get<std::int16_t>(kOffDim + 2 * i);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = reader.get<float>(kOffPixdim + 4 * i);
  h.datatype = reader.get<std::int16_t>(kOffDatatype);
  h.bitpix = reader.get<std::int16_t>(kOffBitpix);
  h.vox_offset = reader.get<float>(kOffVoxOffset);
  h.scl_slope = reader.get<float>(kOffSclSlope);
  h.scl_inter = reader.get<float>(kOffSclInter);

  const int rank = h.dim[0];
  if (rank < 1 || rank > 7) fail(ErrorKind::BadMagic, "dim[0] outside 1..7");
  std::array<int, 3> dims{1, 1, 1};
  for (int i = 1; i <= rank; ++i) {
    if (h.dim[i] < 1) fail(ErrorKind::BadMagic, "non-positive extent in dim[]");
    if (i <= 3) {
      dims[i - 1] = h.dim[i];
    } else if (h.dim[i] != 1) {
      fail(ErrorKind::UnsupportedDatatype, "only single 3D volumes are supported");
    }
  }
  const int bitpix = expected_bitpix(h.datatype);
  if (bitpix < 0) fail(ErrorKind::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
  if (bitpix != h.bitpix) fail(ErrorKind::UnsupportedDatatype, "bitpix inconsistent with datatype");
  if (!(h.vox_offset >= kNiftiDataOffset)) fail(ErrorKind::BadMagic, "vox_offset below 352");

  const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (input.size() < offset || (input.size() - offset) / (bitpix / 8) < count)
    fail(ErrorKind::Truncated, "voxel payload shorter than the header promises");

  std::vector<double> values;
  switch (static_cast<NiftiDatatype>(h.datatype)) {
    case NiftiDatatype::UInt8: values = decode_payload<std::uint8_t>(reader, offset, count); break;
    case NiftiDatatype::Int16: values = decode_payload<std::int16_t>(reader, offset, count); break;
    case NiftiDatatype::Int32: values = decode_payload<std::int32_t>(reader, offset, count); break;
    case NiftiDatatype::Float32: values = decode_payload<float>(reader, offset, count); break;
    case NiftiDatatype::Float64: values = decode_payload<double>(reader, offset, count); break;
  }

  // The identity map is skipped so float payloads, including -0, pass through bit-exact.
  const bool scaled = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  Volume& v = image.volume;
  v.dims = dims;
  for (int i = 0; i < 3; ++i) v.spacing[i] = i < rank && h.pixdim[i + 1] > 0 ? h.pixdim[i + 1] : 1.0f;
  v.data.assign(count, 0.0f);
  // NIfTI stores x fastest; Volume stores z fastest.
  std::size_t src = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x, ++src) {
        double value = values[src];
        if (scaled) value = value * h.scl_slope + h.scl_inter;
        const auto f = static_cast<float>(value);
        if (!std::isfinite(f)) fail(ErrorKind::NonFinite, "non-finite voxel after scaling");
        v(x, y, z) = f;
      }
  return image;
}

NiftiImage read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_nifti(bytes);
}

std::vector<std::uint8_t> encode_nifti(const Volume& volume, std::endian order) {
  validate(volume);
  const bool swap = order != std::endian::native;
  std::vector<std::uint8_t> out(kNiftiDataOffset + volume.size() * sizeof(float), 0);

  put<std::int32_t>(out, 0, kNiftiHeaderSize, swap);
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(volume.dims[0]),
                                        static_cast<std::int16_t>(volume.dims[1]),
                                        static_cast<std::int16_t>(volume.dims[2]),
                                        1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(out, kOffDim + 2 * i, dim[i], swap);
  put<std::int16_t>(out, kOffDatatype, static_cast<std::int16_t>(NiftiDatatype::Float32), swap);
  put<std::int16_t>(out, kOffBitpix, 32, swap);
  const std::array<float, 8> pixdim{1.0f, volume.spacing[0], volume.spacing[1], volume.spacing[2],
                                    1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put<float>(out, kOffPixdim + 4 * i, pixdim[i], swap);
  put<float>(out, kOffVoxOffset, static_cast<float>(kNiftiDataOffset), swap);
  put<float>(out, kOffSclSlope, 1.0f, swap);
  put<float>(out, kOffSclInter, 0.0f, swap);
  out[kOffXyztUnits] = 2;  // millimetres
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  std::size_t dst = kNiftiDataOffset;
  for (int z = 0; z < volume.dims[2]; ++z)
    for (int y = 0; y < volume.dims[1]; ++y)
      for (int x = 0; x < volume.dims[0]; ++x, dst += sizeof(float))
        put<float>(out, dst, volume(x, y, z), swap);
  return out;
}

void write_nifti(const Volume& volume, const std::filesystem::path& path) {
  write_file_atomic(path, encode_nifti(volume));
}

}  // namespace brainage
