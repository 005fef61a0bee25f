#include "yoda/metrics.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>

#include "yoda/error.hpp"
#include "yoda/filter.hpp"
#include "yoda/noise.hpp"

namespace yoda {

namespace {

void require_nonempty(const Mask& m) {
  if (m.empty()) throw Error(ErrorCode::EmptyMask, "evaluation mask is empty");
}

}  // namespace

double masked_range(const Volume& v, const Mask& mask) {
  require_same_dims(v.dims(), mask.dims(), "masked_range");
  require_nonempty(mask);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) continue;
    lo = std::min(lo, static_cast<double>(v[i]));
    hi = std::max(hi, static_cast<double>(v[i]));
  }
  return hi - lo;
}

double ssim3d(const Volume& x_hat, const Volume& x_ref, const Mask& mask, const SsimOptions& opt) {
  require_same_dims(x_hat.dims(), x_ref.dims(), "ssim3d");
  require_same_dims(x_ref.dims(), mask.dims(), "ssim3d mask");
  require_nonempty(mask);
  double range = opt.data_range ? *opt.data_range : masked_range(x_ref, mask);
  if (!(range > 0.0)) range = 1.0;

  const RoiBox box = roi_from_mask(mask, {0, 0, 0});
  const Volume a = crop(x_hat, box);
  const Volume b = crop(x_ref, box);
  const Mask m = crop(mask, box);
  const Dims& d = a.dims();
  const std::size_t n = d.size();

  std::vector<double> xa(n), xb(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    xa[i] = a[i];
    xb[i] = b[i];
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  const auto filt = [&](const std::vector<double>& f) {
    return gaussian_filter(f, d, opt.sigma, opt.radius, Boundary::renormalize);
  };
  const auto mu_a = filt(xa);
  const auto mu_b = filt(xb);
  const auto e_aa = filt(aa);
  const auto e_bb = filt(bb);
  const auto e_ab = filt(ab);

  const double c1 = (opt.k1 * range) * (opt.k1 * range);
  const double c2 = (opt.k2 * range) * (opt.k2 * range);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!m[i]) continue;
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    sum += num / den;
    ++count;
  }
  return sum / static_cast<double>(count);
}

double mse(const Volume& x_hat, const Volume& x_ref, const Mask& mask) {
  require_same_dims(x_hat.dims(), x_ref.dims(), "mse");
  require_same_dims(x_ref.dims(), mask.dims(), "mse mask");
  require_nonempty(mask);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < x_ref.size(); ++i) {
    if (!mask[i]) continue;
    const double d = static_cast<double>(x_hat[i]) - x_ref[i];
    sum += d * d;
    ++count;
  }
  return sum / static_cast<double>(count);
}

double psnr_from_mse(double m, double range) {
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / m);
}

double psnr(const Volume& x_hat, const Volume& x_ref, const Mask& mask) {
  return psnr_from_mse(mse(x_hat, x_ref, mask), masked_range(x_ref, mask));
}

std::vector<std::uint32_t> label_components(const Mask& m, std::size_t* n_components) {
  const Dims& d = m.dims();
  std::vector<std::uint32_t> labels(m.size(), 0);
  std::uint32_t next = 0;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < m.size(); ++seed) {
    if (!m[seed] || labels[seed] != 0) continue;
    labels[seed] = ++next;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const auto z = static_cast<long>(i / (d.h * d.w));
      const auto y = static_cast<long>((i / d.w) % d.h);
      const auto x = static_cast<long>(i % d.w);
      for (long dz = -1; dz <= 1; ++dz) {
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long zz = z + dz, yy = y + dy, xx = x + dx;
            if (zz < 0 || yy < 0 || xx < 0 || zz >= static_cast<long>(d.d) || yy >= static_cast<long>(d.h) ||
                xx >= static_cast<long>(d.w)) {
              continue;
            }
            const std::size_t j = (static_cast<std::size_t>(zz) * d.h + static_cast<std::size_t>(yy)) * d.w +
                                  static_cast<std::size_t>(xx);
            if (m[j] && labels[j] == 0) {
              labels[j] = next;
              queue.push_back(j);
            }
          }
        }
      }
    }
  }
  if (n_components) *n_components = next;
  return labels;
}

CnrReport cnr_report(const Volume& x, const std::vector<std::uint32_t>& lesion_labels, const Mask& wm_mask,
                     const CnrOptions& opt) {
  require_same_dims(x.dims(), wm_mask.dims(), "cnr wm mask");
  if (lesion_labels.size() != x.size()) throw Error(ErrorCode::DimMismatch, "cnr lesion labels");
  const Dims& d = x.dims();
  const Spacing& sp = x.spacing();

  std::uint32_t n_labels = 0;
  for (auto l : lesion_labels) n_labels = std::max(n_labels, l);
  if (n_labels == 0) throw Error(ErrorCode::NoValidLesions, "no lesion voxels");

  // Offsets within the shell radius, in voxels.
  struct Offset {
    long dz, dy, dx;
  };
  std::vector<Offset> ball;
  const long rz = static_cast<long>(std::floor(opt.shell_mm / sp.z));
  const long ry = static_cast<long>(std::floor(opt.shell_mm / sp.y));
  const long rx = static_cast<long>(std::floor(opt.shell_mm / sp.x));
  const double r2 = opt.shell_mm * opt.shell_mm * (1.0 + 1e-12);
  for (long dz = -rz; dz <= rz; ++dz) {
    for (long dy = -ry; dy <= ry; ++dy) {
      for (long dx = -rx; dx <= rx; ++dx) {
        const double dist2 = std::pow(dz * sp.z, 2) + std::pow(dy * sp.y, 2) + std::pow(dx * sp.x, 2);
        if (dist2 <= r2) ball.push_back({dz, dy, dx});
      }
    }
  }

  std::vector<std::vector<std::size_t>> members(n_labels + 1);
  for (std::size_t i = 0; i < lesion_labels.size(); ++i) {
    if (lesion_labels[i] != 0) members[lesion_labels[i]].push_back(i);
  }

  CnrReport rep;
  std::vector<std::uint32_t> stamp(x.size(), 0);
  double weighted = 0.0;
  double weight = 0.0;
  for (std::uint32_t l = 1; l <= n_labels; ++l) {
    const auto& vox = members[l];
    if (vox.empty()) continue;
    double lesion_sum = 0.0;
    double shell_sum = 0.0;
    double shell_sq = 0.0;
    std::size_t shell_n = 0;
    for (std::size_t i : vox) {
      lesion_sum += x[i];
      const auto z = static_cast<long>(i / (d.h * d.w));
      const auto y = static_cast<long>((i / d.w) % d.h);
      const auto xx = static_cast<long>(i % d.w);
      for (const auto& o : ball) {
        const long zz = z + o.dz, yy = y + o.dy, xc = xx + o.dx;
        if (zz < 0 || yy < 0 || xc < 0 || zz >= static_cast<long>(d.d) || yy >= static_cast<long>(d.h) ||
            xc >= static_cast<long>(d.w)) {
          continue;
        }
        const std::size_t j =
            (static_cast<std::size_t>(zz) * d.h + static_cast<std::size_t>(yy)) * d.w + static_cast<std::size_t>(xc);
        if (stamp[j] == l || !wm_mask[j] || lesion_labels[j] != 0) continue;
        stamp[j] = l;
        shell_sum += x[j];
        shell_sq += static_cast<double>(x[j]) * x[j];
        ++shell_n;
      }
    }
    if (shell_n == 0) {
      rep.skipped.push_back(l);
      continue;
    }
    const double mu_wm = shell_sum / static_cast<double>(shell_n);
    const double var = std::max(0.0, shell_sq / static_cast<double>(shell_n) - mu_wm * mu_wm);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      rep.skipped.push_back(l);
      continue;
    }
    const double mu_les = lesion_sum / static_cast<double>(vox.size());
    LesionCnr lc{l, vox.size(), shell_n, (mu_les - mu_wm) / sd};
    rep.lesions.push_back(lc);
    const double w = opt.volume_weighted ? static_cast<double>(vox.size()) : 1.0;
    weighted += w * lc.cnr;
    weight += w;
  }
  if (rep.lesions.empty()) throw Error(ErrorCode::NoValidLesions, "every lesion has an empty or flat WM shell");
  rep.value = weighted / weight;
  return rep;
}

double cnr(const Volume& x, const Mask& lesion_mask, const Mask& wm_mask, const CnrOptions& opt) {
  require_same_dims(x.dims(), lesion_mask.dims(), "cnr lesion mask");
  return cnr_report(x, label_components(lesion_mask), wm_mask, opt).value;
}

MetricReport evaluate(const Volume& x_hat, const Volume& x_ref, const EvalMasks& masks) {
  MetricReport r;
  r.ssim = ssim3d(x_hat, x_ref, masks.tissue);
  r.mse = mse(x_hat, x_ref, masks.tissue);
  r.psnr_db = psnr_from_mse(r.mse, masked_range(x_ref, masks.tissue));
  r.voxel_count = masks.tissue.count();
  if (masks.wm) r.sigma_wm = estimate_wm_noise(x_hat, *masks.wm);
  if (masks.wm && masks.lesion && !masks.lesion->empty()) {
    try {
      r.cnr = cnr(x_hat, *masks.lesion, *masks.wm);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoValidLesions) throw;
    }
  }
  return r;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["ssim"] = r.ssim;
  j["psnr_db"] = std::isinf(r.psnr_db) ? nlohmann::json("inf") : nlohmann::json(r.psnr_db);
  j["mse"] = r.mse;
  j["cnr"] = r.cnr ? nlohmann::json(*r.cnr) : nlohmann::json(nullptr);
  j["sigma_wm"] = r.sigma_wm ? nlohmann::json(*r.sigma_wm) : nlohmann::json(nullptr);
  j["voxel_count"] = r.voxel_count;
  return j;
}

}  // namespace yoda
