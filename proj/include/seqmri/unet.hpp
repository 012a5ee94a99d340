#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqmri/nn_ops.hpp"
#include "seqmri/params.hpp"
#include "seqmri/tape.hpp"

namespace seqmri {

// Per-tape leaf nodes for a parameter set. One ParamLeaves per episode gives
// weight sharing across all steps: every step touches the same handles.
template <class T>
struct ParamLeaves {
  Tape<T>* tape = nullptr;
  std::map<std::string, Node<T>> nodes;

  static ParamLeaves make(Tape<T>& tape, const Params<T>& params, bool requires_grad) {
    ParamLeaves pl;
    pl.tape = &tape;
    for (const auto& [name, t] : params.values)
      pl.nodes.emplace(name, tape.leaf(t, requires_grad));
    return pl;
  }

  Node<T> at(const std::string& name) const {
    auto it = nodes.find(name);
    if (it == nodes.end()) throw std::out_of_range("ParamLeaves: no leaf " + name);
    return it->second;
  }

  // gradients in parameter order, valid after tape.backward()
  std::map<std::string, Tensor<T>> grads() const {
    std::map<std::string, Tensor<T>> g;
    for (const auto& [name, n] : nodes) g.emplace(name, tape->grad(n));
    return g;
  }
};

// ---------------------------------------------------------------------------
// MLP: linear layers separated by ReLU, no activation on the last layer
// ---------------------------------------------------------------------------

template <class T>
void mlp_init(Params<T>& params, const std::string& prefix, const std::vector<int>& dims,
              Rng& rng) {
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::string base = prefix + "l" + std::to_string(l);
    params[base + ".W"] = init_uniform<T>({dims[l], dims[l + 1]}, dims[l], rng);
    params[base + ".b"] = init_uniform<T>({dims[l + 1]}, dims[l], rng);
  }
}

template <class T>
Node<T> mlp_forward(const ParamLeaves<T>& pl, const std::string& prefix, int layers,
                    Node<T> x) {
  Node<T> h = x;
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + "l" + std::to_string(l);
    h = linear(h, pl.at(base + ".W"), pl.at(base + ".b"));
    if (l + 1 < layers) h = relu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// 8-block UNet: 4 down blocks and 4 up blocks, each block two 3x3 convs
// separated by ReLU and instance normalization; skip connections between
// mirrored blocks; widths base,2b,4b,8b; final 1x1 conv to out_ch.
// ---------------------------------------------------------------------------

struct UNetSpec {
  int in_ch = 2;
  int out_ch = 1;
  int base = 16;
};

template <class T>
void conv_block_init(Params<T>& params, const std::string& base, int cin, int cout,
                     Rng& rng) {
  params[base + ".c0.k"] = init_uniform<T>({cout, cin, 3, 3}, cin * 9, rng);
  params[base + ".c0.b"] = init_uniform<T>({cout}, cin * 9, rng);
  params[base + ".c1.k"] = init_uniform<T>({cout, cout, 3, 3}, cout * 9, rng);
  params[base + ".c1.b"] = init_uniform<T>({cout}, cout * 9, rng);
}

template <class T>
Node<T> conv_block(const ParamLeaves<T>& pl, const std::string& base, Node<T> x) {
  x = conv2d(x, pl.at(base + ".c0.k"), 1, 1);
  x = add_channel_bias(x, pl.at(base + ".c0.b"));
  x = instance_norm(relu(x));
  x = conv2d(x, pl.at(base + ".c1.k"), 1, 1);
  x = add_channel_bias(x, pl.at(base + ".c1.b"));
  return instance_norm(relu(x));
}

template <class T>
void unet_init(Params<T>& params, const std::string& prefix, const UNetSpec& spec,
               Rng& rng) {
  const int b = spec.base;
  conv_block_init(params, prefix + "enc0", spec.in_ch, b, rng);
  conv_block_init(params, prefix + "enc1", b, 2 * b, rng);
  conv_block_init(params, prefix + "enc2", 2 * b, 4 * b, rng);
  conv_block_init(params, prefix + "enc3", 4 * b, 8 * b, rng);
  conv_block_init(params, prefix + "dec3", 16 * b, 8 * b, rng);
  conv_block_init(params, prefix + "dec2", 12 * b, 4 * b, rng);
  conv_block_init(params, prefix + "dec1", 6 * b, 2 * b, rng);
  conv_block_init(params, prefix + "dec0", 3 * b, b, rng);
  params[prefix + "out.k"] = init_uniform<T>({spec.out_ch, b, 1, 1}, b, rng);
  params[prefix + "out.b"] = init_uniform<T>({spec.out_ch}, b, rng);
}

template <class T>
Node<T> unet_forward(const ParamLeaves<T>& pl, const std::string& prefix, Node<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("unet_forward: [C,H,W] required");
  if (xv.shape[1] < 16 || xv.shape[2] < 16)
    throw ShapeError("unet_forward: extents too small for 4 downsamplings");
  Node<T> e0 = conv_block(pl, prefix + "enc0", x);
  Node<T> e1 = conv_block(pl, prefix + "enc1", avgpool2x(e0));
  Node<T> e2 = conv_block(pl, prefix + "enc2", avgpool2x(e1));
  Node<T> e3 = conv_block(pl, prefix + "enc3", avgpool2x(e2));
  Node<T> d3 = conv_block(pl, prefix + "dec3", concat_channels(upsample2x(avgpool2x(e3)), e3));
  Node<T> d2 = conv_block(pl, prefix + "dec2", concat_channels(upsample2x(d3), e2));
  Node<T> d1 = conv_block(pl, prefix + "dec1", concat_channels(upsample2x(d2), e1));
  Node<T> d0 = conv_block(pl, prefix + "dec0", concat_channels(upsample2x(d1), e0));
  Node<T> out = conv2d(d0, pl.at(prefix + "out.k"));
  return add_channel_bias(out, pl.at(prefix + "out.b"));
}

}  // namespace seqmri
