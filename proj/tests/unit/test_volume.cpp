#include <doctest.h>

#include <fstream>

#include "support.hpp"

using namespace yoda;
using yoda::test::error_code_of;

TEST_CASE("roi_from_mask covers a full mask") {
  const Mask m(Dims{8, 8, 8}, true);
  const RoiBox box = roi_from_mask(m, {0, 0, 0});
  CHECK(box == RoiBox{{0, 0, 0}, {8, 8, 8}});
}

TEST_CASE("roi_from_mask clamps margins at the volume edge") {
  Mask m(Dims{32, 32, 32});
  m.set((4 * 32 + 4) * 32 + 4, true);
  const std::array<int, 3> margins{5, 10, 20};
  const RoiBox box = roi_from_mask(m, margins);
  // Clamped index arithmetic, written out per axis.
  std::array<std::size_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = static_cast<std::size_t>(std::max(0, 4 - margins[a]));
    hi[a] = static_cast<std::size_t>(std::min(32, 4 + 1 + margins[a]));
  }
  CHECK(box.lo == lo);
  CHECK(box.hi == hi);
  CHECK(box == RoiBox{{0, 0, 0}, {10, 15, 25}});
}

TEST_CASE("roi_from_mask rejects an empty mask") {
  CHECK(error_code_of([] { roi_from_mask(Mask(Dims{4, 4, 4}), {0, 0, 0}); }) == ErrorCode::EmptyMask);
}

TEST_CASE("extract_slab with one slice equals direct slicing") {
  const Volume v = test::random_volume({5, 6, 7}, 1);
  for (std::size_t z = 0; z < 5; ++z) {
    const Slab s = extract_slab(v, Axis::axial, z, 1);
    REQUIRE(s.data.dims() == Dims{1, 6, 7});
    for (std::size_t i = 0; i < 42; ++i) CHECK(s.data[i] == v[z * 42 + i]);
  }
}

TEST_CASE("extract_slab replicates edges against a padded copy") {
  const Volume v = test::random_volume({4, 3, 5}, 2);
  for (Axis axis : {Axis::axial, Axis::coronal, Axis::sagittal}) {
    const Volume r = reorient(v, axis);
    const std::size_t depth = r.dims().d;
    const std::size_t plane = r.dims().h * r.dims().w;
    // Padded copy: two replicated slices on each side.
    std::vector<float> padded((depth + 4) * plane);
    for (std::size_t k = 0; k < depth + 4; ++k) {
      const std::size_t src = std::min<std::size_t>(depth - 1, k < 2 ? 0 : k - 2);
      std::copy_n(r.data().begin() + src * plane, plane, padded.begin() + k * plane);
    }
    for (std::size_t i = 0; i < depth; ++i) {
      const Slab s = extract_slab(v, axis, i, 5);
      REQUIRE(s.data.size() == 5 * plane);
      for (std::size_t j = 0; j < 5 * plane; ++j) CHECK(s.data[j] == padded[i * plane + j]);
    }
  }
  const Slab first = extract_slab(v, Axis::axial, 0, 5);
  const std::size_t plane = 15;
  const std::array<std::size_t, 5> expected{0, 0, 0, 1, 2};
  for (std::size_t k = 0; k < 5; ++k) CHECK(first.slice(k)[0] == v[expected[k] * plane]);
}

TEST_CASE("extract_slab rejects even widths") {
  const Volume v(Dims{4, 4, 4});
  CHECK(error_code_of([&] { extract_slab(v, Axis::axial, 0, 4); }) == ErrorCode::InvalidSlabWidth);
  CHECK(error_code_of([&] { extract_slab(v, Axis::axial, 4, 1); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("reorient identity and roundtrip") {
  const Volume v = test::random_volume({3, 4, 5}, 3);
  CHECK(test::bit_identical(reorient(v, Axis::axial), v));
  for (Axis axis : {Axis::coronal, Axis::sagittal}) CHECK(test::bit_identical(restore_orientation(reorient(v, axis), axis), v));
}

TEST_CASE("reorient permutes indices of an asymmetric volume") {
  Volume v(Dims{2, 3, 4});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
  const Volume cor = reorient(v, Axis::coronal);
  const Volume sag = reorient(v, Axis::sagittal);
  CHECK(cor.dims() == Dims{3, 2, 4});
  CHECK(sag.dims() == Dims{4, 2, 3});
  for (std::size_t z = 0; z < 2; ++z) {
    for (std::size_t y = 0; y < 3; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        CHECK(cor.at(y, z, x) == v.at(z, y, x));
        CHECK(sag.at(x, z, y) == v.at(z, y, x));
      }
    }
  }
}

TEST_CASE("crop and apply_mask") {
  const Volume v = test::random_volume({4, 5, 6}, 4);
  CHECK(test::bit_identical(crop(v, RoiBox{{0, 0, 0}, {4, 5, 6}}), v));
  CHECK(test::bit_identical(apply_mask(v, Mask(v.dims(), true), 0.0F), v));
  Mask m(v.dims());
  Rng rng(5);
  double masked_sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool on = rng.uniform() < 0.4;
    m.set(i, on);
    if (on) masked_sum += v[i];
  }
  const Volume a = apply_mask(v, m, 0.0F);
  double sum = 0.0;
  for (float x : a.data()) sum += x;
  CHECK(sum == doctest::Approx(masked_sum).epsilon(1e-6));
  const Volume c = crop(v, RoiBox{{1, 2, 3}, {3, 4, 5}});
  CHECK(c.dims() == Dims{2, 2, 2});
  CHECK(c.at(1, 1, 1) == v.at(2, 3, 4));
}

TEST_CASE("YVOL save and load") {
  const auto dir = test::temp_dir("volume_io");
  Volume v = test::random_volume({3, 4, 5}, 6, -2.0, 2.0);
  v[7] = -0.0F;
  v[8] = 1e-38F;
  save(v, dir / "a.yvol");
  CHECK(test::bit_identical(load(dir / "a.yvol"), v));

  Mask m = Mask::from_volume(v, 0.5F);
  save(m, dir / "m.yvol");
  CHECK(load_mask(dir / "m.yvol") == m);

  {
    std::ofstream f(dir / "bad_magic.yvol", std::ios::binary);
    f << "NOTVOL_____________________________________";
  }
  CHECK(error_code_of([&] { load(dir / "bad_magic.yvol"); }) == ErrorCode::FormatError);

  // Header claims 2x2x2 but the payload holds 7 floats.
  save(Volume(Dims{2, 2, 2}), dir / "short.yvol");
  std::filesystem::resize_file(dir / "short.yvol", std::filesystem::file_size(dir / "short.yvol") - 4);
  CHECK(error_code_of([&] { load(dir / "short.yvol"); }) == ErrorCode::FormatError);
  CHECK(error_code_of([&] { load(dir / "missing.yvol"); }) == ErrorCode::IoError);
}

TEST_CASE("volume construction checks") {
  CHECK(error_code_of([] { Volume(Dims{2, 2, 2}, std::vector<float>(7)); }) == ErrorCode::DimMismatch);
  const Volume v(Dims{2, 2, 2}, {}, 1.5F);
  CHECK(v.min() == 1.5F);
  CHECK(v.max() == 1.5F);
}
