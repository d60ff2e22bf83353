#pragma once

#include "pinchcut/rng.hpp"

#include <Eigen/Core>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinchcut {

class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Categorical policy: observation -> tanh MLP -> softmax over actions.
///
/// Parameters live in one flat vector, layer by layer, each layer stored as its
/// weight matrix (row-major, out x in) followed by its bias.
class Policy {
 public:
  struct Forward {
    std::vector<Eigen::VectorXd> activations;  // activations[0] is the input
    Eigen::VectorXd logits;
    Eigen::VectorXd probs;
  };

  Policy() = default;

  static Policy create(int observation_size, int action_count, std::uint64_t seed,
                       std::vector<int> hidden = {32, 32}) {
    if (observation_size < 1 || action_count < 2) {
      throw PolicyError("policy needs >= 1 input and >= 2 actions");
    }
    Policy p;
    p.sizes_.push_back(observation_size);
    for (int h : hidden) p.sizes_.push_back(h);
    p.sizes_.push_back(action_count);
    p.params_ = Eigen::VectorXd::Zero(p.parameter_count_for(p.sizes_));

    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index o = 0;
    for (std::size_t l = 0; l + 1 < p.sizes_.size(); ++l) {
      const int in = p.sizes_[l], out = p.sizes_[l + 1];
      // Near-uniform initial action distribution.
      const double scale = (l + 2 == p.sizes_.size() ? 0.01 : 1.0) / std::sqrt(double(in));
      for (int k = 0; k < in * out; ++k) p.params_[o++] = scale * normal(rng);
      o += out;
    }
    return p;
  }

  int observation_size() const { return sizes_.front(); }
  int action_count() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  const Eigen::VectorXd& parameters() const { return params_; }

  void set_parameters(const Eigen::VectorXd& p) {
    if (p.size() != params_.size()) throw PolicyError("parameter vector has the wrong length");
    params_ = p;
  }

  Forward forward(const Eigen::VectorXd& obs) const {
    if (obs.size() != observation_size()) {
      throw PolicyError("observation has " + std::to_string(obs.size()) + " entries, policy expects " +
                        std::to_string(observation_size()));
    }
    Forward f;
    f.activations.reserve(sizes_.size() - 1);
    f.activations.push_back(obs);
    Eigen::Index o = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const int in = sizes_[l], out = sizes_[l + 1];
      const auto w = weights(o, out, in);
      const auto b = params_.segment(o + Eigen::Index(in) * out, out);
      Eigen::VectorXd z = w * f.activations.back() + b;
      o += Eigen::Index(in) * out + out;
      if (l + 2 == sizes_.size()) {
        f.logits = std::move(z);
      } else {
        f.activations.push_back(z.array().tanh().matrix());
      }
    }
    const double m = f.logits.maxCoeff();
    f.probs = (f.logits.array() - m).exp().matrix();
    f.probs /= f.probs.sum();
    return f;
  }

  Eigen::VectorXd probabilities(const Eigen::VectorXd& obs) const { return forward(obs).probs; }

  int sample(const Eigen::VectorXd& obs, Rng& rng) const {
    const Eigen::VectorXd p = probabilities(obs);
    double u = uniform01(rng);
    for (Eigen::Index a = 0; a + 1 < p.size(); ++a) {
      if (u < p[a]) return static_cast<int>(a);
      u -= p[a];
    }
    return static_cast<int>(p.size() - 1);
  }

  int greedy(const Eigen::VectorXd& obs) const {
    Eigen::Index best;
    forward(obs).logits.maxCoeff(&best);
    return static_cast<int>(best);
  }

  /// Accumulates J^T * grad_logits into `grad` (J = d logits / d params).
  void backprop(const Forward& f, const Eigen::VectorXd& grad_logits, Eigen::VectorXd& grad) const {
    Eigen::VectorXd g = grad_logits;
    Eigen::Index end = params_.size();
    for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
      const int in = sizes_[l], out = sizes_[l + 1];
      const Eigen::Index start = end - (Eigen::Index(in) * out + out);
      const Eigen::VectorXd& a = f.activations[l];
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
          grad.data() + start, out, in);
      gw.noalias() += g * a.transpose();
      grad.segment(start + Eigen::Index(in) * out, out) += g;
      if (l > 0) {
        Eigen::VectorXd back = weights(start, out, in).transpose() * g;
        g = (back.array() * (1.0 - a.array().square())).matrix();
      }
      end = start;
    }
  }

  /// Directional derivative of the logits along parameter direction `v`.
  Eigen::VectorXd logits_jvp(const Forward& f, const Eigen::VectorXd& v) const {
    Eigen::VectorXd da = Eigen::VectorXd::Zero(sizes_.front());
    Eigen::Index o = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const int in = sizes_[l], out = sizes_[l + 1];
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dw(
          v.data() + o, out, in);
      Eigen::VectorXd dz = dw * f.activations[l] + weights(o, out, in) * da +
                           v.segment(o + Eigen::Index(in) * out, out);
      o += Eigen::Index(in) * out + out;
      if (l + 2 == sizes_.size()) return dz;
      const Eigen::VectorXd& a = f.activations[l + 1];
      da = (dz.array() * (1.0 - a.array().square())).matrix();
    }
    return da;
  }

  // Serialization: "PCPOLICY" magic, u32 version, u32 layer count, u32 sizes,
  // then the parameters as little-endian IEEE-754 doubles.
  static constexpr char kMagic[8] = {'P', 'C', 'P', 'O', 'L', 'I', 'C', 'Y'};
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PolicyError("cannot open policy file for writing: " + path);
    out.write(kMagic, sizeof kMagic);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(sizes_.size()));
    for (int s : sizes_) write_u32(out, static_cast<std::uint32_t>(s));
    for (Eigen::Index i = 0; i < params_.size(); ++i) {
      write_u64(out, std::bit_cast<std::uint64_t>(params_[i]));
    }
    if (!out) throw PolicyError("failed writing policy file: " + path);
  }

  static Policy load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PolicyError("cannot open policy file: " + path);
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
      throw PolicyError("not a policy file (bad magic): " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
      throw PolicyError("unsupported policy file version " + std::to_string(version) + ": " + path);
    }
    const std::uint32_t layers = read_u32(in);
    if (!in || layers < 2 || layers > 64) throw PolicyError("corrupt policy header: " + path);
    Policy p;
    for (std::uint32_t l = 0; l < layers; ++l) p.sizes_.push_back(static_cast<int>(read_u32(in)));
    p.params_.resize(p.parameter_count_for(p.sizes_));
    for (Eigen::Index i = 0; i < p.params_.size(); ++i) {
      p.params_[i] = std::bit_cast<double>(read_u64(in));
    }
    if (!in) throw PolicyError("truncated policy file: " + path);
    return p;
  }

 private:
  static Eigen::Index parameter_count_for(const std::vector<int>& sizes) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += Eigen::Index(sizes[l]) * sizes[l + 1] + sizes[l + 1];
    return n;
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> weights(
      Eigen::Index offset, int out, int in) const {
    return {params_.data() + offset, out, in};
  }

  static void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  static std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4] = {};
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  }

  std::vector<int> sizes_;
  Eigen::VectorXd params_;
};

}  // namespace pinchcut
