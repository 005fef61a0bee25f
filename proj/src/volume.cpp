#include "yoda/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "yoda/error.hpp"

namespace yoda {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidSlabWidth: return "InvalidSlabWidth";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::InvalidParam: return "InvalidParam";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NumericallySingular: return "NumericallySingular";
    case ErrorCode::UnsupportedKind: return "UnsupportedKind";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::NoValidLesions: return "NoValidLesions";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

const char* to_string(Axis axis) {
  switch (axis) {
    case Axis::axial: return "axial";
    case Axis::coronal: return "coronal";
    case Axis::sagittal: return "sagittal";
  }
  return "axial";
}

Axis axis_from_string(const std::string& name) {
  if (name == "axial" || name == "ax") return Axis::axial;
  if (name == "coronal" || name == "cor") return Axis::coronal;
  if (name == "sagittal" || name == "sag") return Axis::sagittal;
  throw Error(ErrorCode::InvalidParam, "unknown axis '" + name + "'");
}

std::size_t Dims::along(Axis axis) const noexcept {
  switch (axis) {
    case Axis::axial: return d;
    case Axis::coronal: return h;
    case Axis::sagittal: return w;
  }
  return d;
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) {
    throw Error(ErrorCode::DimMismatch,
                std::string(what) + ": " + std::to_string(a.d) + "x" + std::to_string(a.h) + "x" +
                    std::to_string(a.w) + " vs " + std::to_string(b.d) + "x" + std::to_string(b.h) +
                    "x" + std::to_string(b.w));
  }
}

namespace {

void check_dims(const Dims& dims) {
  if (dims.d == 0 || dims.h == 0 || dims.w == 0) {
    throw Error(ErrorCode::InvalidParam, "volume dims must be >= 1");
  }
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, float fill)
    : dims_(dims), spacing_(spacing), data_(dims.size(), fill) {
  check_dims(dims);
}

Volume::Volume(Dims dims, std::vector<float> data, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_dims(dims);
  if (data_.size() != dims.size()) {
    throw Error(ErrorCode::DimMismatch, "raster length does not match dims");
  }
}

float Volume::min() const { return *std::min_element(data_.begin(), data_.end()); }
float Volume::max() const { return *std::max_element(data_.begin(), data_.end()); }

Mask::Mask(Dims dims, bool fill) : dims_(dims), data_(dims.size(), fill ? 1 : 0) {}

Mask::Mask(Dims dims, std::vector<std::uint8_t> data) : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims.size()) {
    throw Error(ErrorCode::DimMismatch, "mask length does not match dims");
  }
  for (auto& b : data_) b = b != 0 ? 1 : 0;
}

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Mask Mask::from_volume(const Volume& v, float threshold) {
  Mask m(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) m.set(i, v[i] > threshold);
  return m;
}

Volume Mask::to_volume() const {
  Volume v(dims_);
  for (std::size_t i = 0; i < data_.size(); ++i) v[i] = data_[i] ? 1.0F : 0.0F;
  return v;
}

std::array<std::size_t, 2> plane_shape(const Dims& dims, Axis axis) {
  switch (axis) {
    case Axis::axial: return {dims.h, dims.w};
    case Axis::coronal: return {dims.d, dims.w};
    case Axis::sagittal: return {dims.d, dims.h};
  }
  return {dims.h, dims.w};
}

namespace {

// Raster index of in-plane position (r, c) of slice `s` along `axis`.
inline std::size_t plane_index(const Dims& dims, Axis axis, std::size_t s, std::size_t r,
                               std::size_t c) {
  switch (axis) {
    case Axis::axial: return (s * dims.h + r) * dims.w + c;
    case Axis::coronal: return (r * dims.h + s) * dims.w + c;
    case Axis::sagittal: return (r * dims.h + c) * dims.w + s;
  }
  return 0;
}

}  // namespace

std::span<const float> Slab::slice(std::size_t k) const {
  const std::size_t n = plane_size();
  return data.data().subspan(k * n, n);
}

RoiBox roi_from_mask(const Mask& mask, std::array<int, 3> margins) {
  const Dims& dims = mask.dims();
  std::array<std::size_t, 3> lo{dims.d, dims.h, dims.w};
  std::array<std::size_t, 3> hi{0, 0, 0};
  bool any = false;
  for (std::size_t z = 0; z < dims.d; ++z) {
    for (std::size_t y = 0; y < dims.h; ++y) {
      for (std::size_t x = 0; x < dims.w; ++x) {
        if (!mask[(z * dims.h + y) * dims.w + x]) continue;
        any = true;
        const std::array<std::size_t, 3> p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a] + 1);
        }
      }
    }
  }
  if (!any) throw Error(ErrorCode::EmptyMask, "roi_from_mask on an empty mask");
  const std::array<std::size_t, 3> ext{dims.d, dims.h, dims.w};
  RoiBox box;
  for (int a = 0; a < 3; ++a) {
    const long m = margins[a];
    box.lo[a] = static_cast<std::size_t>(std::max(0L, static_cast<long>(lo[a]) - m));
    box.hi[a] = static_cast<std::size_t>(
        std::min(static_cast<long>(ext[a]), static_cast<long>(hi[a]) + m));
  }
  return box;
}

Slab extract_slab(const Volume& v, Axis axis, std::size_t index, std::size_t n_slices) {
  if (n_slices == 0 || n_slices % 2 == 0) {
    throw Error(ErrorCode::InvalidSlabWidth, "slab width must be odd, got " + std::to_string(n_slices));
  }
  const Dims& dims = v.dims();
  const std::size_t depth = dims.along(axis);
  if (index >= depth) {
    throw Error(ErrorCode::IndexOutOfRange,
                "slice " + std::to_string(index) + " outside [0," + std::to_string(depth) + ")");
  }
  const auto [rows, cols] = plane_shape(dims, axis);
  std::vector<float> out(n_slices * rows * cols);
  const long half = static_cast<long>(n_slices / 2);
  const auto src = v.data();
  for (std::size_t k = 0; k < n_slices; ++k) {
    const long raw = static_cast<long>(index) + static_cast<long>(k) - half;
    const auto s = static_cast<std::size_t>(std::clamp(raw, 0L, static_cast<long>(depth) - 1));
    float* dst = out.data() + k * rows * cols;
    if (axis == Axis::axial) {
      std::memcpy(dst, src.data() + s * rows * cols, rows * cols * sizeof(float));
      continue;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] = src[plane_index(dims, axis, s, r, c)];
    }
  }
  Slab slab;
  slab.axis = axis;
  slab.center_index = index;
  slab.n_slices = n_slices;
  slab.data = Volume({n_slices, rows, cols}, std::move(out), v.spacing());
  return slab;
}

void insert_slice(Volume& v, Axis axis, std::size_t index, std::span<const float> slice) {
  const Dims dims = v.dims();
  if (index >= dims.along(axis)) throw Error(ErrorCode::IndexOutOfRange, "insert_slice");
  const auto [rows, cols] = plane_shape(dims, axis);
  if (slice.size() != rows * cols) throw Error(ErrorCode::DimMismatch, "insert_slice plane size");
  auto dst = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[plane_index(dims, axis, index, r, c)] = slice[r * cols + c];
  }
}

Volume reorient(const Volume& v, Axis axis) {
  if (axis == Axis::axial) return v;
  const Dims& dims = v.dims();
  const std::size_t depth = dims.along(axis);
  const auto [rows, cols] = plane_shape(dims, axis);
  std::vector<float> out(v.size());
  const auto src = v.data();
  for (std::size_t s = 0; s < depth; ++s) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        out[(s * rows + r) * cols + c] = src[plane_index(dims, axis, s, r, c)];
      }
    }
  }
  return Volume({depth, rows, cols}, std::move(out), v.spacing());
}

Volume restore_orientation(const Volume& v, Axis axis) {
  if (axis == Axis::axial) return v;
  // v has dims (depth, rows, cols) in the permuted frame.
  const Dims& p = v.dims();
  const Dims dims = axis == Axis::coronal ? Dims{p.h, p.d, p.w} : Dims{p.h, p.w, p.d};
  std::vector<float> out(v.size());
  const auto src = v.data();
  for (std::size_t s = 0; s < p.d; ++s) {
    for (std::size_t r = 0; r < p.h; ++r) {
      for (std::size_t c = 0; c < p.w; ++c) {
        out[plane_index(dims, axis, s, r, c)] = src[(s * p.h + r) * p.w + c];
      }
    }
  }
  return Volume(dims, std::move(out), v.spacing());
}

namespace {

void check_box(const Dims& dims, const RoiBox& box) {
  const std::array<std::size_t, 3> ext{dims.d, dims.h, dims.w};
  for (int a = 0; a < 3; ++a) {
    if (box.lo[a] >= box.hi[a] || box.hi[a] > ext[a]) {
      throw Error(ErrorCode::DimMismatch, "ROI box outside volume");
    }
  }
}

}  // namespace

Volume crop(const Volume& v, const RoiBox& box) {
  check_box(v.dims(), box);
  const Dims out_dims = box.extent();
  Volume out(out_dims, v.spacing());
  for (std::size_t z = 0; z < out_dims.d; ++z) {
    for (std::size_t y = 0; y < out_dims.h; ++y) {
      const float* src = v.data().data() + v.index(z + box.lo[0], y + box.lo[1], box.lo[2]);
      std::memcpy(out.data().data() + out.index(z, y, 0), src, out_dims.w * sizeof(float));
    }
  }
  return out;
}

Mask crop(const Mask& m, const RoiBox& box) {
  check_box(m.dims(), box);
  const Dims out_dims = box.extent();
  const Dims& dims = m.dims();
  Mask out(out_dims);
  for (std::size_t z = 0; z < out_dims.d; ++z) {
    for (std::size_t y = 0; y < out_dims.h; ++y) {
      for (std::size_t x = 0; x < out_dims.w; ++x) {
        out.set((z * out_dims.h + y) * out_dims.w + x,
                m[((z + box.lo[0]) * dims.h + y + box.lo[1]) * dims.w + x + box.lo[2]]);
      }
    }
  }
  return out;
}

Volume apply_mask(const Volume& v, const Mask& m, float fill) {
  require_same_dims(v.dims(), m.dims(), "apply_mask");
  Volume out = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!m[i]) out[i] = fill;
  }
  return out;
}

// --- YVOL I/O --------------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'Y', 'V', 'O', 'L', '1', '\0'};
constexpr std::size_t kHeaderBytes = 6 + 3 * 4 + 3 * 4;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::vector<char>& buf, T value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  const auto* p = reinterpret_cast<const char*>(&bits);
  buf.insert(buf.end(), p, p + 4);
}

template <typename T>
T get_le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace

void save(const Volume& v, const std::filesystem::path& path, const std::optional<nlohmann::json>& sidecar) {
  std::vector<char> buf;
  buf.reserve(kHeaderBytes + v.size() * 4);
  buf.insert(buf.end(), kMagic, kMagic + 6);
  put_le(buf, static_cast<std::uint32_t>(v.dims().d));
  put_le(buf, static_cast<std::uint32_t>(v.dims().h));
  put_le(buf, static_cast<std::uint32_t>(v.dims().w));
  put_le(buf, v.spacing().x);
  put_le(buf, v.spacing().y);
  put_le(buf, v.spacing().z);
  for (float f : v.data()) put_le(buf, f);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());

  if (sidecar) {
    auto meta_path = path;
    meta_path.replace_extension(".json");
    std::ofstream meta(meta_path);
    meta << sidecar->dump(2) << '\n';
  }
}

Volume load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes) throw Error(ErrorCode::FormatError, "truncated header in " + path.string());
  if (std::memcmp(buf.data(), kMagic, 6) != 0) throw Error(ErrorCode::FormatError, "bad magic in " + path.string());
  const char* p = buf.data() + 6;
  const Dims dims{get_le<std::uint32_t>(p), get_le<std::uint32_t>(p + 4), get_le<std::uint32_t>(p + 8)};
  const Spacing spacing{get_le<float>(p + 12), get_le<float>(p + 16), get_le<float>(p + 20)};
  if (dims.d == 0 || dims.h == 0 || dims.w == 0) throw Error(ErrorCode::FormatError, "zero dims");
  const std::size_t payload = buf.size() - kHeaderBytes;
  if (payload != dims.size() * 4) {
    throw Error(ErrorCode::FormatError, "payload holds " + std::to_string(payload / 4) + " floats, header claims " +
                                            std::to_string(dims.size()));
  }
  std::vector<float> data(dims.size());
  const char* q = buf.data() + kHeaderBytes;
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_le<float>(q + 4 * i);
  for (float f : data) {
    if (!std::isfinite(f)) throw Error(ErrorCode::FormatError, "non-finite voxel in " + path.string());
  }
  return Volume(dims, std::move(data), spacing);
}

void save(const Mask& m, const std::filesystem::path& path) { save(m.to_volume(), path); }

Mask load_mask(const std::filesystem::path& path) { return Mask::from_volume(load(path)); }

}  // namespace yoda
