#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "seqmri/fft.hpp"
#include "seqmri/params.hpp"
#include "seqmri/tensor.hpp"

namespace seqmri {

enum class MaskMode { kLine, kPoint };

// Binary sampling pattern over K indices: K = W columns in line mode,
// K = H*W points in point mode. Cumulative-monotone across a trace.
struct Mask {
  MaskMode mode = MaskMode::kPoint;
  int height = 0;  // image rows M
  int width = 0;   // image cols N
  std::vector<std::uint8_t> bits;  // length K

  int index_count() const { return mode == MaskMode::kLine ? width : height * width; }
  long long sample_count() const {
    // line mode counts whole lines; each line is `height` points
    long long ones = 0;
    for (auto b : bits) ones += b;
    return ones;
  }
  long long point_count() const {
    return mode == MaskMode::kLine ? sample_count() * height : sample_count();
  }

  static Mask empty(MaskMode mode, int h, int w) {
    Mask m;
    m.mode = mode;
    m.height = h;
    m.width = w;
    m.bits.assign(mode == MaskMode::kLine ? w : h * w, 0);
    return m;
  }

  bool at(int i, int j) const {
    return mode == MaskMode::kLine ? bits[j] != 0 : bits[static_cast<std::size_t>(i) * width + j] != 0;
  }

  // 2-D realization, constant along columns in line mode
  template <class T>
  Tensor<T> realization() const {
    Tensor<T> r({height, width});
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) r.at(i, j) = at(i, j) ? T(1) : T(0);
    return r;
  }
  // per-index vector (length K) used by the sampler
  template <class T>
  Tensor<T> index_vector() const {
    Tensor<T> r({index_count()});
    for (int k = 0; k < index_count(); ++k) r[k] = bits[k] ? T(1) : T(0);
    return r;
  }
};

// Budget accounting for one acquisition episode. All quantities are in
// indices (lines in line mode, points in point mode).
struct AccelSpec {
  MaskMode mode = MaskMode::kPoint;
  int height = 0;
  int width = 0;
  double accel = 4.0;  // alpha
  int steps = 1;       // T

  int index_count() const { return mode == MaskMode::kLine ? width : height * width; }
  int total_budget() const {  // B = round(K/alpha)
    return static_cast<int>(std::llround(index_count() / accel));
  }
  int low_freq_budget() const {  // B_lf = round(B/8)
    return static_cast<int>(std::llround(total_budget() / 8.0));
  }
  int per_step_budget() const {  // S = floor((B - B_lf)/T)
    return (total_budget() - low_freq_budget()) / steps;
  }
  // budget of step t in 1..T; remainder lands on the final step
  int step_budget(int t) const {
    const int s = per_step_budget();
    if (t < steps) return s;
    return total_budget() - low_freq_budget() - s * (steps - 1);
  }
  void validate() const {
    if (height <= 0 || width <= 0 || accel < 1.0 || steps < 1)
      throw ShapeError("AccelSpec: invalid configuration");
    if (low_freq_budget() < 1) throw ShapeError("AccelSpec: low-frequency budget is empty");
    if (low_freq_budget() > index_count()) throw ShapeError("AccelSpec: budget exceeds grid");
    if (per_step_budget() < 1) throw ShapeError("AccelSpec: per-step budget below 1");
  }
};

// image -> centered k-space (unitary DFT, DC at grid center)
template <class T>
Tensor<T> to_kspace(const Tensor<T>& image) {
  if (image.rank() != 2) throw ShapeError("to_kspace: rank-2 real image required");
  const int H = image.shape[0], W = image.shape[1];
  if (H != W || !is_pow2(H)) throw ShapeError("to_kspace: power-of-two square required");
  Tensor<T> g({2, H, W});
  std::copy(image.data.begin(), image.data.end(), g.data.begin());
  return fft2_unitary(g, /*inverse=*/false);
}

// centered k-space -> complex image (2-channel)
template <class T>
Tensor<T> to_image(const Tensor<T>& kspace) {
  return fft2_unitary(kspace, /*inverse=*/true);
}

template <class T>
Tensor<T> apply_mask(const Tensor<T>& kspace, const Mask& m) {
  if (kspace.rank() != 3 || kspace.shape[0] != 2) throw ShapeError("apply_mask: [2,H,W] required");
  if (kspace.shape[1] != m.height || kspace.shape[2] != m.width)
    throw ShapeError("apply_mask: extent mismatch");
  Tensor<T> out = kspace;
  const long long plane = static_cast<long long>(m.height) * m.width;
  for (int i = 0; i < m.height; ++i)
    for (int j = 0; j < m.width; ++j)
      if (!m.at(i, j)) {
        out.data[static_cast<std::size_t>(i) * m.width + j] = T(0);
        out.data[plane + static_cast<std::size_t>(i) * m.width + j] = T(0);
      }
  return out;
}

// zero-filled reconstruction: x_hat = F^{-1}(y_hat), 2-channel image
template <class T>
Tensor<T> zero_fill(const Tensor<T>& masked_kspace) {
  return to_image(masked_kspace);
}

inline double acceleration(const Mask& m) {
  const long long ones = m.sample_count();
  if (ones < 1) throw ShapeError("acceleration: empty mask");
  return static_cast<double>(m.index_count()) / static_cast<double>(ones);
}

// Deterministic index ordering by distance from the DC index, used for the
// centered pre-selection. Point mode walks outward in Chebyshev rings,
// 180-degree symmetric pairs first; an odd remainder breaks symmetry by at
// most one index.
inline std::vector<int> center_order(MaskMode mode, int h, int w) {
  std::vector<int> order;
  if (mode == MaskMode::kLine) {
    const int dc = w / 2;
    order.push_back(dc);
    for (int d = 1; d < w; ++d) {
      if (dc - d >= 0) order.push_back(dc - d);
      if (dc + d < w) order.push_back(dc + d);
    }
  } else {
    const int ci = h / 2, cj = w / 2;
    order.push_back(ci * w + cj);
    const int maxr = std::max(std::max(ci, h - 1 - ci), std::max(cj, w - 1 - cj));
    for (int r = 1; r <= maxr; ++r) {
      // walk one half of the ring; emit each point with its 180-degree partner
      std::vector<std::pair<int, int>> half;
      for (int j = cj - r; j <= cj + r; ++j) half.push_back({ci - r, j});
      for (int i = ci - r + 1; i < ci; ++i) {
        half.push_back({i, cj - r});
        half.push_back({i, cj + r});
      }
      half.push_back({ci, cj - r});  // partner is (ci, cj + r)
      for (auto [i, j] : half) {
        const int pi = 2 * ci - i, pj = 2 * cj - j;
        if (i >= 0 && i < h && j >= 0 && j < w) order.push_back(i * w + j);
        if (pi >= 0 && pi < h && pj >= 0 && pj < w) order.push_back(pi * w + pj);
      }
    }
  }
  return order;
}

// Pre-selected central low-frequency region holding exactly B_lf indices.
inline Mask low_freq_mask(const AccelSpec& spec) {
  spec.validate();
  Mask m = Mask::empty(spec.mode, spec.height, spec.width);
  const int blf = spec.low_freq_budget();
  const auto order = center_order(spec.mode, spec.height, spec.width);
  for (int k = 0; k < blf; ++k) m.bits[order[k]] = 1;
  return m;
}

// ---------------------------------------------------------------------------
// exports: PGM (0/255) and JSON index lists
// ---------------------------------------------------------------------------

inline void write_mask_pgm(const std::string& path, const Mask& m,
                           const std::string& comment = "") {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_mask_pgm: cannot open " + path);
  os << "P5\n";
  if (!comment.empty()) os << "# " << comment << "\n";
  os << m.width << " " << m.height << "\n255\n";
  for (int i = 0; i < m.height; ++i)
    for (int j = 0; j < m.width; ++j) os.put(m.at(i, j) ? char(255) : char(0));
}

template <class T>
void write_image_pgm(const std::string& path, const Tensor<T>& img,
                     const std::string& comment = "") {
  if (img.rank() != 2) throw ShapeError("write_image_pgm: rank-2 required");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_image_pgm: cannot open " + path);
  os << "P5\n";
  if (!comment.empty()) os << "# " << comment << "\n";
  os << img.shape[1] << " " << img.shape[0] << "\n255\n";
  T lo = img[0], hi = img[0];
  for (const T& v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = static_cast<double>(hi - lo);
  for (const T& v : img.data) {
    const double u = span > 0 ? (static_cast<double>(v - lo) / span) : 0.0;
    os.put(static_cast<char>(static_cast<int>(std::lround(u * 255.0))));
  }
}

inline void write_mask_json(const std::string& path, const Mask& m,
                            const std::string& config_hash = "") {
  std::ofstream os(path);
  if (!os) throw IoError("write_mask_json: cannot open " + path);
  os << "{\"mode\":\"" << (m.mode == MaskMode::kLine ? "line" : "point") << "\",";
  os << "\"height\":" << m.height << ",\"width\":" << m.width << ",";
  if (!config_hash.empty()) os << "\"config_hash\":\"" << config_hash << "\",";
  os << "\"indices\":[";
  bool first = true;
  for (std::size_t k = 0; k < m.bits.size(); ++k)
    if (m.bits[k]) {
      if (!first) os << ",";
      os << k;
      first = false;
    }
  os << "]}\n";
}

}  // namespace seqmri
