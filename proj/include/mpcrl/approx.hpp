#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "mpcrl/core.hpp"
#include "mpcrl/random.hpp"

namespace mpcrl {

enum class OutputActivation { Identity, Tanh };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Gradient with the same layout as the network parameters.
struct MlpGradient {
  std::vector<Layer> layers;

  MlpGradient& operator+=(const MlpGradient& other);
  double squared_norm() const;
};

/// Fully connected network with rectifier hidden layers. The output layer is
/// either affine or `output_scale * tanh(.)` for bounded actors.
///
/// Batched calls take one sample per column.
class Mlp {
 public:
  struct Tape {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    Matrix output;
  };

  struct Backward {
    MlpGradient params;
    Matrix input;  // d loss / d input, one column per sample
  };

  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> layer_sizes, OutputActivation output = OutputActivation::Identity,
               Vector output_scale = {});

  /// Uniform fan-in initialization: each weight and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
  void initialize(Rng& rng);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  OutputActivation output_activation() const { return output_; }
  const Vector& output_scale() const { return scale_; }
  std::size_t parameter_count() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Matrix forward(const Matrix& x) const;
  Vector forward(const Vector& x) const;
  Matrix forward(const Matrix& x, Tape& tape) const;

  /// Reverse-mode gradients of a scalar loss whose gradient with respect to
  /// the outputs is `upstream` (same shape as tape.output).
  Backward backward(const Tape& tape, const Matrix& upstream) const;

  MlpGradient zero_gradient() const;
  bool all_finite() const;

  /// Flat parameter view: each layer's weight (column-major) then bias.
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

  bool operator==(const Mlp& other) const;

 private:
  void check_input(Eigen::Index rows) const;

  std::vector<std::size_t> sizes_;
  OutputActivation output_ = OutputActivation::Identity;
  Vector scale_;
  std::vector<Layer> layers_;
};

Vector flatten(const MlpGradient& g);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer state for one network.
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamOptions options);

  /// Throws NumericalError naming the offending layer on a non-finite gradient.
  void step(Mlp& net, const MlpGradient& grad);

  long steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  long steps_ = 0;
  std::vector<Layer> m_;
  std::vector<Layer> v_;
};

/// Slow-moving copy: shadow <- (1 - zeta) shadow + zeta online.
class TargetNet {
 public:
  TargetNet() = default;
  TargetNet(const Mlp& online, double zeta);

  void soft_update(const Mlp& online);
  const Mlp& net() const { return shadow_; }
  Mlp& net() { return shadow_; }
  double zeta() const { return zeta_; }

 private:
  Mlp shadow_;
  double zeta_ = 0.01;
};

/// Checkpoint text format, version 1:
///
///   mlp v1
///   layers <n> <size_0> ... <size_{n-1}>
///   output identity|tanh [<scale_0> ...]
///   <layer i weights, row-major, one line>
///   <layer i bias, one line>
///
/// Numbers are written in shortest round-trip form, so a reload is exact.
void write_mlp(std::ostream& out, const Mlp& net);
Mlp read_mlp(std::istream& in);

/// Shortest decimal text that parses back to exactly `x`.
std::string format_double(double x);

}  // namespace mpcrl
