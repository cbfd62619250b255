#pragma once

#include "divcon/core.hpp"
#include "divcon/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace divcon {

/// sin/cos features of every coordinate at frequencies 2^j * pi, j < levels.
/// Layout: for each level j, for each coordinate m, the pair (sin, cos).
inline Eigen::VectorXd positional_encoding(std::span<const double> x, int levels) {
  if (levels < 0) fail(ErrorCode::InvalidArgument, "encoding levels must be non-negative");
  Eigen::VectorXd out(2 * levels * static_cast<int>(x.size()));
  int k = 0;
  for (int j = 0; j < levels; ++j) {
    const double freq = std::ldexp(kPi, j);
    for (double xm : x) {
      out[k++] = std::sin(freq * xm);
      out[k++] = std::cos(freq * xm);
    }
  }
  return out;
}

/// Column-wise encoding of a 3 x n block into a (6 * levels) x n block.
inline Eigen::MatrixXd encode_columns(const Eigen::Matrix3Xd& x, int levels) {
  Eigen::MatrixXd out(6 * levels, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    int k = 0;
    for (int j = 0; j < levels; ++j) {
      const double freq = std::ldexp(kPi, j);
      for (int m = 0; m < 3; ++m) {
        out(k++, c) = std::sin(freq * x(m, c));
        out(k++, c) = std::cos(freq * x(m, c));
      }
    }
  }
  return out;
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct FieldArchitecture {
  int pos_levels = 6;
  int dir_levels = 2;
  int hidden_layers = 4;
  int hidden_width = 64;  // also the bottleneck width
  int color_width = 32;
  /// Positions are multiplied by this before encoding. The sin/cos basis has
  /// period 2 in scaled units, so the scaled scene must fit inside [-1, 1).
  double position_scale = 0.25;
  double density_bias_init = -1.0;

  int pos_features() const { return 6 * pos_levels; }
  int dir_features() const { return 6 * dir_levels; }
  int bottleneck_dim() const { return hidden_width; }

  bool operator==(const FieldArchitecture&) const = default;
};

/// One affine layer's slice of the flat parameter vector. Weights are stored
/// column-major as an (out x in) matrix, followed by `out` biases.
struct LayerSlice {
  int in = 0;
  int out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  std::size_t count() const { return static_cast<std::size_t>(in) * out + out; }
};

struct FieldLayout {
  std::vector<LayerSlice> hidden;
  LayerSlice density;
  LayerSlice color_hidden;
  LayerSlice color_out;
  std::size_t parameter_count = 0;

  explicit FieldLayout(const FieldArchitecture& arch) {
    std::size_t offset = 0;
    auto add = [&offset](int in, int out) {
      LayerSlice s{in, out, offset, offset + static_cast<std::size_t>(in) * out};
      offset += s.count();
      return s;
    };
    int in = arch.pos_features();
    for (int l = 0; l < arch.hidden_layers; ++l) {
      hidden.push_back(add(in, arch.hidden_width));
      in = arch.hidden_width;
    }
    density = add(arch.hidden_width, 1);
    color_hidden = add(arch.hidden_width + arch.dir_features(), arch.color_width);
    color_out = add(arch.color_width, 3);
    parameter_count = offset;
  }

  /// Closed-form count, kept separate from the offset walk above so the two
  /// can be checked against each other.
  static std::size_t analytic_count(const FieldArchitecture& a) {
    const std::size_t h = a.hidden_width;
    const std::size_t first = static_cast<std::size_t>(a.pos_features()) * h + h;
    const std::size_t deeper = static_cast<std::size_t>(a.hidden_layers - 1) * (h * h + h);
    const std::size_t dens = h + 1;
    const std::size_t ch = (h + a.dir_features()) * a.color_width + a.color_width;
    const std::size_t co = static_cast<std::size_t>(a.color_width) * 3 + 3;
    return first + deeper + dens + ch + co;
  }
};

struct FieldOutput {
  Vec3 color = Vec3::Zero();
  double density = 0.0;
  Eigen::VectorXd bottleneck;
};

/// Everything the backward pass needs from one batched forward evaluation.
/// Column c of every matrix belongs to query c.
struct FieldCache {
  Eigen::MatrixXd enc_pos;
  std::vector<Eigen::MatrixXd> hidden_pre;
  std::vector<Eigen::MatrixXd> hidden;  // hidden.back() is the bottleneck h(X)
  Eigen::MatrixXd color_in;
  Eigen::MatrixXd color_hidden_pre;
  Eigen::MatrixXd color_hidden;
  Eigen::RowVectorXd density_pre;
  Eigen::VectorXd sigma;
  Eigen::Matrix3Xd color;

  Eigen::Index size() const { return sigma.size(); }
  const Eigen::MatrixXd& bottleneck() const { return hidden.back(); }
};

/// Radiance field: positional encoding, a ReLU trunk whose last activation is
/// the bottleneck feature, a softplus density head on that bottleneck, and a
/// small sigmoid color head fed with the bottleneck and the encoded unit view
/// direction.
class FieldModel {
 public:
  FieldModel() : FieldModel(FieldArchitecture{}) {}

  explicit FieldModel(const FieldArchitecture& arch)
      : arch_(arch), layout_(arch), params_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout_.parameter_count))) {
    if (arch.pos_levels < 0 || arch.dir_levels < 0 || arch.hidden_layers < 1 || arch.hidden_width < 1 ||
        arch.color_width < 1 || !(arch.position_scale > 0.0))
      fail(ErrorCode::InvalidArgument, "invalid field architecture");
  }

  static FieldModel initialized(const FieldArchitecture& arch, std::uint64_t seed) {
    FieldModel model(arch);
    CounterRng rng(seed, Stream::Init);
    auto fill = [&](const LayerSlice& s, double bound) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i)
        model.params_[static_cast<Eigen::Index>(s.weight_offset + i)] = rng.uniform(-bound, bound);
    };
    for (const auto& s : model.layout_.hidden) fill(s, std::sqrt(6.0 / s.in));
    fill(model.layout_.density, std::sqrt(1.0 / model.layout_.density.in));
    fill(model.layout_.color_hidden, std::sqrt(6.0 / model.layout_.color_hidden.in));
    fill(model.layout_.color_out, std::sqrt(1.0 / model.layout_.color_out.in));
    model.params_[static_cast<Eigen::Index>(model.layout_.density.bias_offset)] = arch.density_bias_init;
    return model;
  }

  const FieldArchitecture& architecture() const { return arch_; }
  const FieldLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.parameter_count; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }

  void set_parameters(const Eigen::VectorXd& p) {
    if (p.size() != params_.size()) fail(ErrorCode::ShapeMismatch, "parameter vector has the wrong length");
    params_ = p;
  }

  bool parameters_finite() const { return params_.allFinite(); }

  /// Batched forward pass. `dirs` need not be normalized.
  FieldCache forward(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs) const {
    if (points.cols() != dirs.cols()) fail(ErrorCode::ShapeMismatch, "points and directions differ in count");
    FieldCache c;
    const Eigen::Index n = points.cols();
    c.enc_pos = encode_columns(points * arch_.position_scale, arch_.pos_levels);

    const Eigen::MatrixXd* in = &c.enc_pos;
    c.hidden_pre.reserve(layout_.hidden.size());
    c.hidden.reserve(layout_.hidden.size());
    for (const auto& s : layout_.hidden) {
      c.hidden_pre.push_back((weights(s) * *in).colwise() + bias(s));
      c.hidden.push_back(c.hidden_pre.back().cwiseMax(0.0));
      in = &c.hidden.back();
    }
    const Eigen::MatrixXd& h = c.hidden.back();

    c.density_pre = (weights(layout_.density) * h).colwise() + bias(layout_.density);
    c.sigma.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) c.sigma[i] = softplus(c.density_pre[i]);

    Eigen::Matrix3Xd unit_dirs = dirs;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double len = unit_dirs.col(i).norm();
      if (!(len > 0.0)) fail(ErrorCode::DegenerateDirection, "zero view direction");
      unit_dirs.col(i) /= len;
    }
    c.color_in.resize(arch_.hidden_width + arch_.dir_features(), n);
    c.color_in.topRows(arch_.hidden_width) = h;
    c.color_in.bottomRows(arch_.dir_features()) = encode_columns(unit_dirs, arch_.dir_levels);
    c.color_hidden_pre = (weights(layout_.color_hidden) * c.color_in).colwise() + bias(layout_.color_hidden);
    c.color_hidden = c.color_hidden_pre.cwiseMax(0.0);
    const Eigen::MatrixXd color_pre = (weights(layout_.color_out) * c.color_hidden).colwise() + bias(layout_.color_out);
    c.color.resize(3, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int ch = 0; ch < 3; ++ch) c.color(ch, i) = sigmoid(color_pre(ch, i));

    if (!c.sigma.allFinite() || !c.color.allFinite() || !h.allFinite())
      fail(ErrorCode::NonFiniteOutput, "field produced a non-finite activation");
    return c;
  }

  FieldOutput forward_one(const Vec3& x, const Vec3& d) const {
    Eigen::Matrix3Xd p(3, 1), q(3, 1);
    p.col(0) = x;
    q.col(0) = d;
    const FieldCache c = forward(p, q);
    return FieldOutput{c.color.col(0), c.sigma[0], c.bottleneck().col(0)};
  }

  /// Accumulates dLoss/dparams into `grad` given upstream gradients with
  /// respect to density (n), color (3 x n) and, optionally, the bottleneck
  /// feature (hidden_width x n; pass an empty matrix to skip). Linear in the
  /// upstream gradients.
  void backward(const FieldCache& c, const Eigen::VectorXd& d_sigma, const Eigen::Matrix3Xd& d_color,
                const Eigen::MatrixXd& d_feature, Eigen::VectorXd& grad) const {
    const Eigen::Index n = c.size();
    if (d_sigma.size() != n || d_color.cols() != n || (d_feature.size() != 0 && d_feature.cols() != n))
      fail(ErrorCode::ShapeMismatch, "upstream gradient does not match the cached batch");
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());

    Eigen::Matrix3Xd d_color_pre(3, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = c.color(ch, i);
        d_color_pre(ch, i) = d_color(ch, i) * v * (1.0 - v);
      }
    accumulate(layout_.color_out, d_color_pre, c.color_hidden, grad);
    Eigen::MatrixXd d_ch = weights(layout_.color_out).transpose() * d_color_pre;
    d_ch = d_ch.cwiseProduct((c.color_hidden_pre.array() > 0.0).cast<double>().matrix());
    accumulate(layout_.color_hidden, d_ch, c.color_in, grad);
    const Eigen::MatrixXd d_color_in = weights(layout_.color_hidden).transpose() * d_ch;

    Eigen::RowVectorXd d_density_pre(n);
    for (Eigen::Index i = 0; i < n; ++i) d_density_pre[i] = d_sigma[i] * sigmoid(c.density_pre[i]);
    accumulate(layout_.density, d_density_pre, c.hidden.back(), grad);

    Eigen::MatrixXd d_h = d_color_in.topRows(arch_.hidden_width);
    d_h.noalias() += weights(layout_.density).transpose() * d_density_pre;
    if (d_feature.size() != 0) d_h += d_feature;

    for (std::size_t l = layout_.hidden.size(); l-- > 0;) {
      const auto& s = layout_.hidden[l];
      const Eigen::MatrixXd d_pre = d_h.cwiseProduct((c.hidden_pre[l].array() > 0.0).cast<double>().matrix());
      const Eigen::MatrixXd& input = l == 0 ? c.enc_pos : c.hidden[l - 1];
      accumulate(s, d_pre, input, grad);
      if (l > 0) d_h = weights(s).transpose() * d_pre;
    }
  }

 private:
  Eigen::Map<const Eigen::MatrixXd> weights(const LayerSlice& s) const {
    return Eigen::Map<const Eigen::MatrixXd>(params_.data() + s.weight_offset, s.out, s.in);
  }
  Eigen::Map<const Eigen::VectorXd> bias(const LayerSlice& s) const {
    return Eigen::Map<const Eigen::VectorXd>(params_.data() + s.bias_offset, s.out);
  }

  static void accumulate(const LayerSlice& s, const Eigen::MatrixXd& d_out, const Eigen::MatrixXd& input,
                         Eigen::VectorXd& grad) {
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + s.weight_offset, s.out, s.in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + s.bias_offset, s.out);
    gw.noalias() += d_out * input.transpose();
    gb += d_out.rowwise().sum();
  }

  FieldArchitecture arch_;
  FieldLayout layout_;
  Eigen::VectorXd params_;
};

// ---------------------------------------------------------------------------
// Checkpoint file. Layout (all integers and floats little-endian):
//   8 bytes  magic "DVCNCKPT"
//   u32      format version (1)
//   u32 x5   pos_levels, dir_levels, hidden_layers, hidden_width, color_width
//   f64      position_scale
//   f64      density_bias_init
//   u64      parameter count
//   f64 x N  parameters
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kCheckpointMagic{'D', 'V', 'C', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v, int bytes = 8) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_f64(std::vector<unsigned char>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}
  std::uint64_t u64(int width = 8) {
    if (pos_ + width > bytes_.size()) fail(ErrorCode::Io, "checkpoint is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(u64(4)); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const FieldModel& model) {
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  const auto& a = model.architecture();
  detail::put_u64(out, kCheckpointVersion, 4);
  for (int v : {a.pos_levels, a.dir_levels, a.hidden_layers, a.hidden_width, a.color_width})
    detail::put_u64(out, static_cast<std::uint32_t>(v), 4);
  detail::put_f64(out, a.position_scale);
  detail::put_f64(out, a.density_bias_init);
  detail::put_u64(out, model.parameter_count());
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) detail::put_f64(out, model.parameters()[i]);
  return out;
}

inline FieldModel deserialize_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    fail(ErrorCode::Io, "not a field checkpoint");
  detail::ByteReader in(bytes.subspan(kCheckpointMagic.size()));
  if (in.u32() != kCheckpointVersion) fail(ErrorCode::Io, "unsupported checkpoint version");
  FieldArchitecture a;
  a.pos_levels = static_cast<int>(in.u32());
  a.dir_levels = static_cast<int>(in.u32());
  a.hidden_layers = static_cast<int>(in.u32());
  a.hidden_width = static_cast<int>(in.u32());
  a.color_width = static_cast<int>(in.u32());
  a.position_scale = in.f64();
  a.density_bias_init = in.f64();
  FieldModel model(a);
  const std::uint64_t count = in.u64();
  if (count != model.parameter_count() || in.remaining() != count * 8)
    fail(ErrorCode::Io, "checkpoint parameter count does not match its architecture");
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) model.parameters()[i] = in.f64();
  if (!model.parameters_finite()) fail(ErrorCode::Io, "checkpoint holds non-finite parameters");
  return model;
}

inline void save_checkpoint(const FieldModel& model, const std::string& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

inline FieldModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace divcon
