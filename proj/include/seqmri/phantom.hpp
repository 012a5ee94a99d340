#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "seqmri/forward_model.hpp"
#include "seqmri/params.hpp"
#include "seqmri/rng.hpp"
#include "seqmri/tensor.hpp"

namespace seqmri {

// ---------------------------------------------------------------------------
// random-ellipse phantoms
// ---------------------------------------------------------------------------

struct PhantomSpec {
  int extent = 64;            // power-of-two square
  int min_ellipses = 3;
  int max_ellipses = 8;
  double min_intensity = 0.2;
  double max_intensity = 1.0;
  double major_min = 0.08, major_max = 0.30;  // semi-axes, fraction of extent
  double minor_min = 0.05, minor_max = 0.25;
  double orientation_jitter = 3.14159265358979323846;  // per-ellipse, radians
  double rotation_min = 0.0, rotation_max = 0.0;       // global rotation phi
  double smoothing = 0.8;     // Gaussian sigma in pixels, 0 disables
  std::uint64_t seed = 0;

  void validate() const {
    if (extent < 8 || !is_pow2(extent)) throw ShapeError("PhantomSpec: extent");
    if (min_ellipses < 0 || max_ellipses < min_ellipses)
      throw ShapeError("PhantomSpec: ellipse count range");
    if (min_intensity < 0 || max_intensity > 1 || max_intensity < min_intensity)
      throw ShapeError("PhantomSpec: intensity range");
    if (major_min <= 0 || major_max < major_min || minor_min <= 0 || minor_max < minor_min)
      throw ShapeError("PhantomSpec: axis range");
    if (smoothing < 0) throw ShapeError("PhantomSpec: smoothing");
  }
};

namespace detail {

template <class T>
void gaussian_smooth(Tensor<T>& img, double sigma) {
  if (sigma <= 0) return;
  const int n = img.shape[0];
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double ksum = 0;
  for (int d = -radius; d <= radius; ++d) {
    k[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
    ksum += k[d + radius];
  }
  for (auto& v : k) v /= ksum;
  auto clamp = [n](int i) { return std::min(std::max(i, 0), n - 1); };
  Tensor<T> tmp(img.shape);
  for (int i = 0; i < n; ++i)  // rows
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int d = -radius; d <= radius; ++d)
        acc += k[d + radius] * static_cast<double>(img.at(i, clamp(j + d)));
      tmp.at(i, j) = static_cast<T>(acc);
    }
  for (int i = 0; i < n; ++i)  // columns
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int d = -radius; d <= radius; ++d)
        acc += k[d + radius] * static_cast<double>(tmp.at(clamp(i + d), j));
      img.at(i, j) = static_cast<T>(acc);
    }
}

}  // namespace detail

// Sum of anisotropic ellipses, clipped to [0,1] and lightly smoothed. A global
// rotation phi (drawn from the spec's range) turns every ellipse orientation;
// per-ellipse jitter is added on top. phi_out reports the drawn rotation.
template <class T>
Tensor<T> generate_phantom(const PhantomSpec& spec, Rng& rng, double* phi_out = nullptr) {
  spec.validate();
  const int n = spec.extent;
  Tensor<T> img({n, n});
  const double phi = rng.uniform(spec.rotation_min, spec.rotation_max);
  if (phi_out) *phi_out = phi;
  const int count = rng.range(spec.min_ellipses, spec.max_ellipses);
  for (int e = 0; e < count; ++e) {
    const double ci = rng.uniform(0.25, 0.75) * n;
    const double cj = rng.uniform(0.25, 0.75) * n;
    const double a = rng.uniform(spec.major_min, spec.major_max) * n;
    const double b = rng.uniform(spec.minor_min, spec.minor_max) * n;
    const double theta = phi + rng.uniform(-spec.orientation_jitter, spec.orientation_jitter);
    const double inten = rng.uniform(spec.min_intensity, spec.max_intensity);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double di = i - ci, dj = j - cj;
        const double u = (dj * ct + di * st) / a;
        const double v = (-dj * st + di * ct) / b;
        if (u * u + v * v <= 1.0)
          img.at(i, j) = static_cast<T>(static_cast<double>(img.at(i, j)) + inten);
      }
  }
  for (auto& v : img.data) v = std::min(std::max(v, T(0)), T(1));
  detail::gaussian_smooth(img, spec.smoothing);
  for (auto& v : img.data) v = std::min(std::max(v, T(0)), T(1));
  return img;
}

// Principal axis (radians, in [-pi/2, pi/2)) of the second moment of a
// non-negative weight grid about the DC center. Used for spectrum/mask
// orientation probes.
template <class T>
double principal_axis(const Tensor<T>& w) {
  if (w.rank() != 2) throw ShapeError("principal_axis: rank-2 required");
  const int H = w.shape[0], W = w.shape[1];
  const double ci = H / 2, cj = W / 2;
  double suu = 0, svv = 0, suv = 0;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const double weight = static_cast<double>(w.at(i, j));
      const double u = j - cj, v = i - ci;
      suu += weight * u * u;
      svv += weight * v * v;
      suv += weight * u * v;
    }
  double ang = 0.5 * std::atan2(2.0 * suv, suu - svv);
  if (ang >= 1.5707963267948966) ang -= 3.141592653589793;
  if (ang < -1.5707963267948966) ang += 3.141592653589793;
  return ang;
}

// |F(x)|^2 on the centered grid
template <class T>
Tensor<double> power_spectrum(const Tensor<T>& image) {
  Tensor<double> dbl({image.shape[0], image.shape[1]});
  for (long long i = 0; i < image.numel(); ++i) dbl[i] = static_cast<double>(image[i]);
  auto y = to_kspace(dbl);
  const long long plane = static_cast<long long>(image.shape[0]) * image.shape[1];
  Tensor<double> p({image.shape[0], image.shape[1]});
  for (long long i = 0; i < plane; ++i) p[i] = y[i] * y[i] + y[plane + i] * y[plane + i];
  return p;
}

// ---------------------------------------------------------------------------
// dataset + on-disk format
// ---------------------------------------------------------------------------

enum class Split { kTrain, kVal, kTest };

// 80/10/10, exact up to rounding, pure function of (index, seed)
inline Split split_of(std::size_t index, std::uint64_t seed) {
  const std::uint64_t r = (index + seed) % 10;
  if (r < 8) return Split::kTrain;
  return r == 8 ? Split::kVal : Split::kTest;
}

template <class T>
struct Dataset {
  int extent = 0;
  std::uint64_t seed = 0;  // drives the split assignment
  std::vector<Tensor<T>> images;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (split_of(i, seed) == s) out.push_back(i);
    return out;
  }
  std::vector<Tensor<T>> split(Split s) const {
    std::vector<Tensor<T>> out;
    for (auto i : indices(s)) out.push_back(images[i]);
    return out;
  }
};

// Per-image derived RNG streams: image i depends only on (spec.seed, i).
template <class T>
Dataset<T> generate_dataset(const PhantomSpec& spec, int count) {
  spec.validate();
  if (count < 1) throw ShapeError("generate_dataset: count must be positive");
  Dataset<T> ds;
  ds.extent = spec.extent;
  ds.seed = spec.seed;
  ds.images.reserve(count);
  Rng root(spec.seed);
  for (int i = 0; i < count; ++i) {
    Rng img_rng = root.fork(static_cast<std::uint64_t>(i) + 1);
    ds.images.push_back(generate_phantom<T>(spec, img_rng));
  }
  return ds;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

// "SQDS" | version u32 | count u32 | extent u32 | count*extent^2 f32 LE |
// CRC32 (zlib polynomial) over all preceding bytes, as u32 LE.
template <class T>
void write_dataset(const std::string& path, const Dataset<T>& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_dataset: cannot open " + path);
  std::string buf;
  buf.reserve(16 + ds.images.size() * static_cast<std::size_t>(ds.extent) * ds.extent * 4);
  auto put_u32 = [&buf](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  };
  buf.append("SQDS", 4);
  put_u32(kDatasetVersion);
  put_u32(static_cast<std::uint32_t>(ds.images.size()));
  put_u32(static_cast<std::uint32_t>(ds.extent));
  for (const auto& img : ds.images) {
    if (img.shape != std::vector<int>{ds.extent, ds.extent})
      throw ShapeError("write_dataset: image extent mismatch");
    for (const T& v : img.data) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(bits);
    }
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size())));
  put_u32(crc);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write_dataset: short write to " + path);
}

template <class T>
Dataset<T> load_dataset(const std::string& path, std::uint64_t split_seed = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_dataset: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 20) throw IoError("load_dataset: truncated file " + path);
  auto get_u32 = [&buf](std::size_t off) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + b])) << (8 * b);
    return v;
  };
  if (buf.compare(0, 4, "SQDS") != 0) throw IoError("load_dataset: bad magic");
  if (get_u32(4) != kDatasetVersion) throw IoError("load_dataset: version mismatch");
  const std::uint32_t count = get_u32(8);
  const std::uint32_t extent = get_u32(12);
  const std::size_t body = 16 + static_cast<std::size_t>(count) * extent * extent * 4;
  if (buf.size() != body + 4) throw IoError("load_dataset: truncated file " + path);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
  if (crc != get_u32(body)) throw IoError("load_dataset: checksum failure");
  Dataset<T> ds;
  ds.extent = static_cast<int>(extent);
  ds.seed = split_seed;
  ds.images.reserve(count);
  std::size_t off = 16;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<T> img({static_cast<int>(extent), static_cast<int>(extent)});
    for (long long k = 0; k < img.numel(); ++k, off += 4) {
      const std::uint32_t bits = get_u32(off);
      float f;
      std::memcpy(&f, &bits, 4);
      img[k] = static_cast<T>(f);
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

}  // namespace seqmri
