#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace yoda::nn {

/// Three-level convolutional encoder-decoder with additive sinusoidal time
/// conditioning on the encoder and bottleneck. Input planes must have sides
/// divisible by 4.
struct UNetConfig {
  std::size_t in_channels = 15;
  std::array<std::size_t, 3> channels{16, 32, 64};
  std::size_t time_embedding = 32;
};

struct LayerInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Cache-line aligned storage so that kernel results do not depend on where a buffer lands.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename S>
using Buffer = std::vector<S, AlignedAllocator<S>>;

template <typename S>
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  Buffer<S> data;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), data(c_ * h_ * w_, S(0)) {}
  std::size_t plane() const noexcept { return h * w; }
};

/// Sinusoidal embedding of a (possibly fractional) time index.
template <typename S>
std::vector<S> time_embedding(double t, std::size_t width);

template <typename S>
class UNet {
 public:
  /// Activations kept from the forward pass for backprop, plus scratch
  /// buffers. Reusing a tape across calls avoids reallocating them.
  struct Tape {
    Tensor<S> x;
    std::vector<S> emb;
    Tensor<S> z1, a1, p1, z2, a2, p2, z3, a3, zm, am, zd3, ad3, u2, zd2, ad2, u1, zd1, ad1, out;
    struct Grads {
      Tensor<S> out, ad1, u1, ad2, u2, ad3, am, a3, p2, p1;
    } grads;
    Buffer<S> col, dcol;
  };

  explicit UNet(UNetConfig config);

  const UNetConfig& config() const noexcept { return config_; }
  std::size_t parameter_count() const noexcept { return n_params_; }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }

  /// He-normal convolutions, zero biases, zero output head.
  void init(std::span<S> params, std::uint64_t seed) const;

  /// Single-channel output plane of size x.h * x.w.
  std::vector<S> forward(std::span<const S> params, const Tensor<S>& x, double t) const;
  std::vector<S> forward(std::span<const S> params, const Tensor<S>& x, double t, Tape& tape) const;
  /// Accumulates dLoss/dparams into grad given dLoss/doutput.
  void backward(std::span<const S> params, Tape& tape, std::span<const S> d_out, std::span<S> grad) const;

 private:
  struct Conv {
    std::size_t cin, cout, k, w_off, b_off;
  };
  struct Dense {
    std::size_t rows, cols, off;
  };

  Conv add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k);
  Dense add_dense(const std::string& name, std::size_t rows, std::size_t cols);

  UNetConfig config_;
  std::size_t n_params_ = 0;
  std::vector<LayerInfo> layers_;
  Conv e1_, e2_, e3_, mid_, d3_, d2_, d1_, out_;
  Dense t1_, t2_, t3_, tm_;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace yoda::nn
