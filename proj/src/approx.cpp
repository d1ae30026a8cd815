#include "mpcrl/approx.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mpcrl/errors.hpp"

namespace mpcrl {

MlpGradient& MlpGradient::operator+=(const MlpGradient& other) {
  if (layers.size() != other.layers.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

double MlpGradient::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, OutputActivation output, Vector output_scale)
    : sizes_(std::move(layer_sizes)), output_(output), scale_(std::move(output_scale)) {
  if (sizes_.size() < 2) throw ShapeError("an MLP needs at least an input and an output layer");
  for (auto s : sizes_) {
    if (s == 0) throw ShapeError("MLP layer sizes must be positive");
  }
  if (output_ == OutputActivation::Tanh) {
    if (scale_.size() == 0) scale_ = Vector::Ones(static_cast<Eigen::Index>(sizes_.back()));
    if (scale_.size() != static_cast<Eigen::Index>(sizes_.back())) {
      throw ShapeError("output scale must match the output layer size");
    }
  }
  layers_.reserve(sizes_.size() - 1);
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(sizes_[i]);
    const auto out = static_cast<Eigen::Index>(sizes_[i + 1]);
    layers_.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
  }
}

void Mlp::initialize(Rng& rng) {
  for (auto& l : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = rng.uniform(-bound, bound);
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-bound, bound);
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void Mlp::check_input(Eigen::Index rows) const {
  if (layers_.empty()) throw ShapeError("MLP has no layers");
  if (rows != static_cast<Eigen::Index>(sizes_.front())) {
    throw ShapeError("MLP expects input of size " + std::to_string(sizes_.front()) + ", got " +
                     std::to_string(rows));
  }
}

Matrix Mlp::forward(const Matrix& x) const {
  check_input(x.rows());
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      a = z.cwiseMax(0.0);
    } else if (output_ == OutputActivation::Tanh) {
      a = scale_.asDiagonal() * z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

Vector Mlp::forward(const Vector& x) const {
  Matrix m = forward(Matrix(x));
  return m.col(0);
}

Matrix Mlp::forward(const Matrix& x, Tape& tape) const {
  check_input(x.rows());
  tape.inputs.resize(layers_.size());
  tape.pre.resize(layers_.size());
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    tape.inputs[l] = a;
    Matrix z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    tape.pre[l] = z;
    if (l + 1 < layers_.size()) {
      a = z.cwiseMax(0.0);
    } else if (output_ == OutputActivation::Tanh) {
      a = scale_.asDiagonal() * z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  tape.output = a;
  return a;
}

Mlp::Backward Mlp::backward(const Tape& tape, const Matrix& upstream) const {
  if (tape.pre.size() != layers_.size()) throw ShapeError("tape does not belong to this network");
  if (upstream.rows() != tape.output.rows() || upstream.cols() != tape.output.cols()) {
    throw ShapeError("upstream gradient shape does not match the network output");
  }
  Backward result;
  result.params.layers.resize(layers_.size());

  Matrix g = upstream;
  if (output_ == OutputActivation::Tanh) {
    const Eigen::ArrayXXd t = tape.pre.back().array().tanh();
    g = (scale_.asDiagonal() * g).array() * (1.0 - t * t);
  }
  for (std::size_t l = layers_.size(); l-- > 0;) {
    auto& out = result.params.layers[l];
    out.weight = g * tape.inputs[l].transpose();
    out.bias = g.rowwise().sum();
    Matrix g_in = layers_[l].weight.transpose() * g;
    if (l > 0) g_in = (tape.pre[l - 1].array() > 0.0).select(g_in, 0.0);
    g = std::move(g_in);
  }
  result.input = std::move(g);
  return result;
}

MlpGradient Mlp::zero_gradient() const {
  MlpGradient g;
  for (const auto& l : layers_) {
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return g;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

Vector Mlp::flat_parameters() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    flat.segment(k, l.weight.size()) = Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    k += l.weight.size();
    flat.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return flat;
}

void Mlp::set_flat_parameters(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) throw ShapeError("flat parameter size mismatch");
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    Eigen::Map<Vector>(l.weight.data(), l.weight.size()) = flat.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = flat.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

bool Mlp::operator==(const Mlp& other) const {
  if (sizes_ != other.sizes_ || output_ != other.output_) return false;
  if (scale_.size() != other.scale_.size() || scale_ != other.scale_) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].weight != other.layers_[i].weight || layers_[i].bias != other.layers_[i].bias) return false;
  }
  return true;
}

Vector flatten(const MlpGradient& g) {
  Eigen::Index n = 0;
  for (const auto& l : g.layers) n += l.weight.size() + l.bias.size();
  Vector flat(n);
  Eigen::Index k = 0;
  for (const auto& l : g.layers) {
    flat.segment(k, l.weight.size()) = Eigen::Map<const Vector>(l.weight.data(), l.weight.size());
    k += l.weight.size();
    flat.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return flat;
}

// ---------------------------------------------------------------------------

Adam::Adam(const Mlp& net, AdamOptions options) : options_(options) {
  for (const auto& l : net.layers()) {
    m_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  v_ = m_;
}

void Adam::step(Mlp& net, const MlpGradient& grad) {
  auto& layers = net.layers();
  if (grad.layers.size() != layers.size() || m_.size() != layers.size()) {
    throw ShapeError("optimizer, network and gradient disagree on layer count");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& g = grad.layers[i];
    if (g.weight.rows() != layers[i].weight.rows() || g.weight.cols() != layers[i].weight.cols() ||
        g.bias.size() != layers[i].bias.size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(i));
    }
    if (!g.weight.allFinite() || !g.bias.allFinite()) {
      throw NumericalError("non-finite gradient at layer " + std::to_string(i) + " (step " +
                           std::to_string(steps_ + 1) + ", |grad|^2 = " +
                           std::to_string(grad.squared_norm()) + ")");
    }
  }
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = options_.learning_rate;
  const double eps = options_.epsilon;

  auto apply = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    apply(layers[i].weight, m_[i].weight, v_[i].weight, grad.layers[i].weight);
    apply(layers[i].bias, m_[i].bias, v_[i].bias, grad.layers[i].bias);
  }
}

// ---------------------------------------------------------------------------

TargetNet::TargetNet(const Mlp& online, double zeta) : shadow_(online), zeta_(zeta) {
  if (!(zeta >= 0.0 && zeta < 1.0)) throw std::invalid_argument("target blend factor must lie in [0, 1)");
}

void TargetNet::soft_update(const Mlp& online) {
  if (online.layer_sizes() != shadow_.layer_sizes()) throw ShapeError("target and online networks differ in shape");
  auto& dst = shadow_.layers();
  const auto& src = online.layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i].weight = (1.0 - zeta_) * dst[i].weight + zeta_ * src[i].weight;
    dst[i].bias = (1.0 - zeta_) * dst[i].bias + zeta_ * src[i].bias;
  }
}

// ---------------------------------------------------------------------------

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, end);
}

namespace {

double parse_double(const std::string& token) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw std::runtime_error("malformed number in checkpoint: '" + token + "'");
  }
  return v;
}

std::vector<double> read_numbers(std::istream& in, std::size_t count) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint ended early");
  std::istringstream ss(line);
  std::vector<double> values;
  std::string tok;
  while (ss >> tok) values.push_back(parse_double(tok));
  if (values.size() != count) {
    throw std::runtime_error("checkpoint line has " + std::to_string(values.size()) + " numbers, expected " +
                             std::to_string(count));
  }
  return values;
}

void write_numbers(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) out << ' ';
    out << format_double(data[i]);
  }
  out << '\n';
}

}  // namespace

void write_mlp(std::ostream& out, const Mlp& net) {
  out << "mlp v1\n";
  out << "layers " << net.layer_sizes().size();
  for (auto s : net.layer_sizes()) out << ' ' << s;
  out << '\n';
  if (net.output_activation() == OutputActivation::Tanh) {
    out << "output tanh";
    for (Eigen::Index i = 0; i < net.output_scale().size(); ++i) out << ' ' << format_double(net.output_scale()(i));
    out << '\n';
  } else {
    out << "output identity\n";
  }
  for (const auto& l : net.layers()) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = l.weight;
    write_numbers(out, row_major.data(), row_major.size());
    write_numbers(out, l.bias.data(), l.bias.size());
  }
}

Mlp read_mlp(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mlp v1") throw std::runtime_error("not an mlp v1 checkpoint");

  if (!std::getline(in, line)) throw std::runtime_error("checkpoint ended early");
  std::istringstream ls(line);
  std::string word;
  std::size_t count = 0;
  if (!(ls >> word >> count) || word != "layers" || count < 2) throw std::runtime_error("malformed layers line");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) {
    if (!(ls >> s)) throw std::runtime_error("malformed layers line");
  }

  if (!std::getline(in, line)) throw std::runtime_error("checkpoint ended early");
  std::istringstream os(line);
  std::string kind;
  os >> word >> kind;
  if (word != "output") throw std::runtime_error("malformed output line");
  Mlp net;
  if (kind == "identity") {
    net = Mlp(sizes);
  } else if (kind == "tanh") {
    Vector scale(static_cast<Eigen::Index>(sizes.back()));
    std::string tok;
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
      if (!(os >> tok)) throw std::runtime_error("missing output scale");
      scale(i) = parse_double(tok);
    }
    net = Mlp(sizes, OutputActivation::Tanh, scale);
  } else {
    throw std::runtime_error("unknown output activation '" + kind + "'");
  }

  for (auto& l : net.layers()) {
    const auto w = read_numbers(in, static_cast<std::size_t>(l.weight.size()));
    l.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.data(), l.weight.rows(), l.weight.cols());
    const auto b = read_numbers(in, static_cast<std::size_t>(l.bias.size()));
    l.bias = Eigen::Map<const Vector>(b.data(), l.bias.size());
  }
  return net;
}

}  // namespace mpcrl
