#pragma once

// Flat parameter storage. Every trainable tensor is a named block in one
// contiguous vector, which is what the optimizer, the checkpoint format and
// the gradient checker operate on.

#include <cmath>
#include <string>
#include <vector>

#include "unicaclf/cap.hpp"
#include "unicaclf/heads.hpp"
#include "unicaclf/rng.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

struct BranchBlocks {
  std::size_t conv1_w, conv1_b, conv2_w, conv2_b, out_w, out_b;
};

/// Block indices of one pyramid level. For the CaP variant: wq, wk, wv, beta.
/// For the convolutional baseline: weight, bias (wk/wv/beta unused).
struct LevelBlocks {
  std::size_t a = 0, b = 0, c = 0, d = 0;
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg) : cfg_(cfg) {
    const auto c = cfg.input_dim;
    const auto h = cfg.embed_dim;
    for (int l = 0; l < cfg.num_levels; ++l) {
      const std::string p = "level" + std::to_string(l + 1) + ".";
      LevelBlocks lb;
      if (cfg.variant == PyramidVariant::kCap) {
        lb.a = add(p + "wq", c, c);
        lb.b = add(p + "wk", c, c);
        lb.c = add(p + "wv", c, c);
        lb.d = add(p + "beta", 1, 1);
      } else {
        lb.a = add(p + "res.weight", c, kConvKernel * c);
        lb.b = add(p + "res.bias", c, 1);
      }
      levels_.push_back(lb);
    }
    cls_ = add_branch("cls.", c, h, 1);
    reg_ = add_branch("reg.", c, h, 2);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  const LevelBlocks& level(std::size_t l) const { return levels_.at(l); }
  const BranchBlocks& cls() const noexcept { return cls_; }
  const BranchBlocks& reg() const noexcept { return reg_; }
  std::size_t total() const noexcept { return total_; }

  /// Name of the block holding flat coordinate `index`, with the in-block position.
  std::string describe(std::size_t index) const {
    for (const auto& b : blocks_)
      if (index >= b.offset && index < b.offset + b.size())
        return b.name + "[" + std::to_string(index - b.offset) + "]";
    return "?";
  }

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), total_, rows, cols});
    total_ += rows * cols;
    return blocks_.size() - 1;
  }
  BranchBlocks add_branch(const std::string& p, std::size_t in, std::size_t hidden, std::size_t outs) {
    BranchBlocks b;
    b.conv1_w = add(p + "conv1.weight", hidden, kConvKernel * in);
    b.conv1_b = add(p + "conv1.bias", hidden, 1);
    b.conv2_w = add(p + "conv2.weight", hidden, kConvKernel * hidden);
    b.conv2_b = add(p + "conv2.bias", hidden, 1);
    b.out_w = add(p + "out.weight", outs, hidden);
    b.out_b = add(p + "out.bias", outs, 1);
    return b;
  }

  ModelConfig cfg_;
  std::vector<ParamBlock> blocks_;
  std::vector<LevelBlocks> levels_;
  BranchBlocks cls_{}, reg_{};
  std::size_t total_ = 0;
};

/// Read/write views between the flat vector and structured tensors.
class ParamView {
 public:
  ParamView(const ParamLayout& layout, std::span<const double> values)
      : layout_(&layout), values_(values) {}

  Matrix matrix(std::size_t block) const {
    const auto& b = layout_->block(block);
    Matrix m(b.rows, b.cols);
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), m.data().begin());
    return m;
  }
  Vector vector(std::size_t block) const { return matrix(block).data(); }
  double scalar(std::size_t block) const { return values_[layout_->block(block).offset]; }

  CapLevelParams cap_level(std::size_t l) const {
    const auto& lb = layout_->level(l);
    return {matrix(lb.a), matrix(lb.b), matrix(lb.c), scalar(lb.d)};
  }
  Conv1dParams residual_level(std::size_t l) const {
    const auto& lb = layout_->level(l);
    return {matrix(lb.a), vector(lb.b)};
  }
  HeadBranch branch(const BranchBlocks& bb) const {
    return {{matrix(bb.conv1_w), vector(bb.conv1_b)},
            {matrix(bb.conv2_w), vector(bb.conv2_b)},
            matrix(bb.out_w),
            vector(bb.out_b)};
  }
  HeadParams heads() const { return {branch(layout_->cls()), branch(layout_->reg())}; }

 private:
  const ParamLayout* layout_;
  std::span<const double> values_;
};

/// Accumulates structured gradients into a flat gradient vector.
class GradSink {
 public:
  GradSink(const ParamLayout& layout, std::span<double> grad) : layout_(&layout), grad_(grad) {}

  void add(std::size_t block, std::span<const double> g, double scale = 1.0) {
    const auto& b = layout_->block(block);
    for (std::size_t i = 0; i < b.size(); ++i) grad_[b.offset + i] += scale * g[i];
  }
  void add(std::size_t block, const Matrix& g, double scale = 1.0) { add(block, g.data(), scale); }
  void add_scalar(std::size_t block, double g) { grad_[layout_->block(block).offset] += g; }

  void add_branch(const BranchBlocks& bb, const BranchGrads& g) {
    add(bb.conv1_w, g.conv1.weight);
    add(bb.conv1_b, g.conv1.bias);
    add(bb.conv2_w, g.conv2.weight);
    add(bb.conv2_b, g.conv2.bias);
    add(bb.out_w, g.out_weight);
    add(bb.out_b, g.out_bias);
  }

 private:
  const ParamLayout* layout_;
  std::span<double> grad_;
};

/// Prior probability of the forged class used to initialise the
/// classification bias, so the untrained model starts with low scores.
constexpr double kClassPrior = 0.01;

inline Vector init_params(const ParamLayout& layout, Rng& rng) {
  Vector v(layout.total(), 0.0);
  auto fill_normal = [&](std::size_t block, double stddev) {
    const auto& b = layout.block(block);
    for (std::size_t i = 0; i < b.size(); ++i) v[b.offset + i] = rng.normal(0.0, stddev);
  };
  const auto& cfg = layout.config();
  const double c = static_cast<double>(cfg.input_dim);
  const double h = static_cast<double>(cfg.embed_dim);
  for (int l = 0; l < cfg.num_levels; ++l) {
    const auto& lb = layout.level(static_cast<std::size_t>(l));
    if (cfg.variant == PyramidVariant::kCap) {
      fill_normal(lb.a, 1.0 / std::sqrt(c));
      // Wk starts as -Wq so every gate is open at initialization; a gate that is
      // closed on every instant receives no gradient and never opens.
      const auto& q = layout.block(lb.a);
      const auto& k = layout.block(lb.b);
      for (std::size_t i = 0; i < q.size(); ++i) v[k.offset + i] = -v[q.offset + i];
      fill_normal(lb.c, 1.0 / std::sqrt(c));
      // beta_raw = 0 -> beta = 0.5
    } else {
      fill_normal(lb.a, std::sqrt(2.0 / (3.0 * c)));
    }
  }
  for (const BranchBlocks* bb : {&layout.cls(), &layout.reg()}) {
    fill_normal(bb->conv1_w, std::sqrt(2.0 / (3.0 * c)));
    fill_normal(bb->conv2_w, std::sqrt(2.0 / (3.0 * h)));
    fill_normal(bb->out_w, 0.01);
  }
  v[layout.block(layout.cls().out_b).offset] = -std::log((1.0 - kClassPrior) / kClassPrior);
  return v;
}

}  // namespace unicaclf
