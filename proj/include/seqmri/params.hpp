#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqmri/rng.hpp"
#include "seqmri/tensor.hpp"

namespace seqmri {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named parameter collection. Ordered map keeps serialization and the Adam
// update order stable across runs.
template <class T>
struct Params {
  std::map<std::string, Tensor<T>> values;

  Tensor<T>& operator[](const std::string& name) { return values[name]; }
  const Tensor<T>& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw std::out_of_range("Params: no parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return values.count(name) > 0; }
  std::size_t count() const { return values.size(); }

  long long total_scalars() const {
    long long n = 0;
    for (const auto& [k, v] : values) n += v.numel();
    return n;
  }
};

// fan-in scaled uniform init on [-sqrt(1/fan_in), +sqrt(1/fan_in)]
template <class T>
Tensor<T> init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// checkpoint format: "SQSM", version u32, then records of
//   name_len u32 | name bytes | rank u32 | extents u32 x rank | f32 data (LE)
// Adam state rides along as records named "adam:m:<p>", "adam:v:<p>", "adam:step".
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void write_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}
inline float read_f32(std::istream& is) {
  std::uint32_t u = read_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

template <class T>
void write_record(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int e : t.shape) write_u32(os, static_cast<std::uint32_t>(e));
  for (const T& v : t.data) write_f32(os, static_cast<float>(v));
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_records(const std::string& path, const std::map<std::string, Tensor<T>>& recs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write("SQSM", 4);
  detail::write_u32(os, kCheckpointVersion);
  for (const auto& [name, t] : recs) detail::write_record(os, name, t);
  if (!os) throw IoError("checkpoint: write failure on " + path);
}

template <class T>
std::map<std::string, Tensor<T>> load_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SQSM") throw IoError("checkpoint: bad magic in " + path);
  const std::uint32_t ver = detail::read_u32(is);
  if (ver != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(ver));
  std::map<std::string, Tensor<T>> recs;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t nlen = detail::read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const std::uint32_t rank = detail::read_u32(is);
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(detail::read_u32(is));
    Tensor<T> t(shape);
    for (auto& v : t.data) v = static_cast<T>(detail::read_f32(is));
    if (!is) throw IoError("checkpoint: truncated record " + name);
    recs.emplace(std::move(name), std::move(t));
  }
  return recs;
}

}  // namespace seqmri
