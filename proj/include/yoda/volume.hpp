#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace yoda {

/// Slicing axis. Axial slices are stacked along z (the slowest raster axis),
/// coronal along y, sagittal along x.
enum class Axis : int { axial = 0, coronal = 1, sagittal = 2 };

const char* to_string(Axis axis);
Axis axis_from_string(const std::string& name);

/// Raster extent in (d, h, w) = (z, y, x) order.
struct Dims {
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const noexcept { return d * h * w; }
  std::size_t along(Axis axis) const noexcept;
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  float x = 1.0F;
  float y = 1.0F;
  float z = 1.0F;

  bool operator==(const Spacing&) const = default;
};

/// Dense f32 raster, x-fastest: index = (z * h + y) * w + x.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, Spacing spacing = {}, float fill = 0.0F);
  Volume(Dims dims, std::vector<float> data, Spacing spacing = {});

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * dims_.h + y) * dims_.w + x;
  }
  float at(std::size_t z, std::size_t y, std::size_t x) const noexcept { return data_[index(z, y, x)]; }
  float& at(std::size_t z, std::size_t y, std::size_t x) noexcept { return data_[index(z, y, x)]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& operator[](std::size_t i) noexcept { return data_[i]; }

  float min() const;
  float max() const;

  bool operator==(const Volume&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
};

/// Boolean raster matching a Volume's dims. Stored as bytes.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Dims dims, bool fill = false);
  Mask(Dims dims, std::vector<std::uint8_t> data);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool operator[](std::size_t i) const noexcept { return data_[i] != 0; }
  void set(std::size_t i, bool value) noexcept { data_[i] = value ? 1 : 0; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }

  /// Threshold a volume: voxel is true where value > threshold.
  static Mask from_volume(const Volume& v, float threshold = 0.5F);
  Volume to_volume() const;

  bool operator==(const Mask&) const = default;

 private:
  Dims dims_{};
  std::vector<std::uint8_t> data_;
};

/// Axis-aligned box. Components are ordered (axial, coronal, sagittal), i.e.
/// (z, y, x); lo inclusive, hi exclusive.
struct RoiBox {
  std::array<std::size_t, 3> lo{};
  std::array<std::size_t, 3> hi{};

  Dims extent() const noexcept { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool operator==(const RoiBox&) const = default;
};

/// n_slices consecutive slices along `axis`. `data` holds them as a volume of
/// dims (n_slices, plane rows, plane cols) in the same in-plane order that
/// reorient() produces.
struct Slab {
  Axis axis = Axis::axial;
  std::size_t center_index = 0;
  std::size_t n_slices = 1;
  Volume data;

  std::span<const float> slice(std::size_t k) const;
  std::span<const float> center() const { return slice(n_slices / 2); }
  std::size_t plane_size() const noexcept { return data.dims().h * data.dims().w; }
};

/// In-plane (rows, cols) shape of a slice along `axis`.
std::array<std::size_t, 2> plane_shape(const Dims& dims, Axis axis);

RoiBox roi_from_mask(const Mask& mask, std::array<int, 3> margins);

Slab extract_slab(const Volume& v, Axis axis, std::size_t index, std::size_t n_slices);

/// Copy a single slice (dims (1, rows, cols)) into `v` along `axis`.
void insert_slice(Volume& v, Axis axis, std::size_t index, std::span<const float> slice);

/// Permute so `axis` becomes the leading (slowest) axis. Axial is the identity.
Volume reorient(const Volume& v, Axis axis);
/// Inverse of reorient(v, axis).
Volume restore_orientation(const Volume& v, Axis axis);

Volume crop(const Volume& v, const RoiBox& box);
Mask crop(const Mask& m, const RoiBox& box);
Volume apply_mask(const Volume& v, const Mask& m, float fill);

void save(const Volume& v, const std::filesystem::path& path,
          const std::optional<nlohmann::json>& sidecar = std::nullopt);
Volume load(const std::filesystem::path& path);
void save(const Mask& m, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

void require_same_dims(const Dims& a, const Dims& b, const char* what);

}  // namespace yoda
