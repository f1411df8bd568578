#pragma once

// Reverse-mode differentiation over NCHW tensors.
//
// A Tape records every operation in creation order; Tape::backward walks the
// records in reverse. Parameters live outside the tape and receive their
// gradients in Parameter::grad, so one tape is used per forward pass.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icehrnet/tensor.hpp"

namespace icehrnet::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Norm running statistics are stored as non-trainable parameters so that
  // they serialize alongside the weights.
  bool trainable = true;
};

class Tape;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var param(Parameter& p);

  // Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  // Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(Var v);

  // Used by operations to register a result node.
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn fn);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

int conv_output_extent(int input, int kernel, const ConvGeometry& g);

// x: (N, Cin, H, W); weight: (Cout, Cin, k, k); bias optional (1, Cout, 1, 1).
Var conv2d(Var x, Var weight, const Var* bias, const ConvGeometry& geometry);

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

// gamma/beta: (1, C, 1, 1). Running statistics are updated in training mode.
Var batch_norm(Var x, Var gamma, Var beta, Parameter& running_mean, Parameter& running_var,
               const BatchNormOptions& options);

Var relu(Var x);
Var add(Var a, Var b);
Var concat_channels(std::span<const Var> parts);
// Bilinear resize with half-pixel centers (align_corners = false).
Var resize_bilinear(Var x, int out_h, int out_w);
Var global_avg_pool(Var x);
Var mean_all(Var x);

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Mean cross-entropy over pixels whose label is not kIgnoreLabel.
// labels are laid out (N, H, W) row-major.
Var cross_entropy(Var logits, std::span<const std::uint8_t> labels);

}  // namespace icehrnet::nn
