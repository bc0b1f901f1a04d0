#pragma once

// Full model forward pass on one sample (pyramid, heads, losses) with a
// recorded trace and an exact reverse-mode backward pass over it.

#include <optional>
#include <stdexcept>
#include <vector>

#include "unicaclf/cap.hpp"
#include "unicaclf/conv.hpp"
#include "unicaclf/data_io.hpp"
#include "unicaclf/heads.hpp"
#include "unicaclf/losses.hpp"
#include "unicaclf/params.hpp"
#include "unicaclf/postprocess.hpp"

namespace unicaclf {

/// Labels and regression targets of one sample at every pyramid level.
struct PreparedSample {
  const Sample* sample = nullptr;
  std::vector<InstantMask> masks;
  std::vector<LevelTargets> targets;
  bool cacl_skipped = true;  // no level has both genuine and forged instants
  std::size_t unmatched = 0;
};

inline PreparedSample prepare_sample(const Sample& s, const ModelConfig& cfg) {
  PreparedSample p;
  p.sample = &s;
  p.masks = level_masks(s.truth, s.sequence.num_instants(), s.sequence.instants_per_second,
                        cfg.num_levels, cfg.forged_threshold);
  std::size_t stride = 1;
  for (const auto& m : p.masks) {
    p.targets.push_back(assign_targets(m, s.truth, stride, s.sequence.instants_per_second));
    p.unmatched += p.targets.back().unmatched;
    const auto forged = m.count_forged();
    if (forged > 0 && forged < m.size()) p.cacl_skipped = false;
    stride *= 2;
  }
  if (cfg.variant == PyramidVariant::kConvBaseline) p.cacl_skipped = true;
  return p;
}

struct SampleLoss {
  double cls = 0.0;
  double reg = 0.0;
  double cacl = 0.0;
  bool cacl_skipped = true;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Multipliers applied to each per-sample loss term during backward.
struct LossWeights {
  double cls = 1.0;
  double reg = 1.0;
  double cacl = 1.0;
};

class ForwardPass {
 public:
  ForwardPass(const ParamLayout& layout, std::span<const double> params)
      : layout_(&layout), view_(layout, params) {}

  /// Pyramid and heads only (no labels needed).
  void run_features(const Matrix& features) {
    const auto& cfg = layout_->config();
    if (features.cols() != cfg.input_dim)
      throw std::invalid_argument("feature dimension " + std::to_string(features.cols()) +
                                  " does not match model input_dim " +
                                  std::to_string(cfg.input_dim));
    input_ = features;
    levels_.clear();
    heads_ = view_.heads();
    context0_ = init_context(features);
    Vector context = context0_;
    std::size_t stride = 1;
    for (int l = 0; l < cfg.num_levels; ++l) {
      LevelTrace lt;
      if (l == 0) {
        lt.input = features;
      } else {
        lt.pool = downsample_features_traced(levels_.back().output);
        lt.input = lt.pool->output;
        stride *= 2;
      }
      lt.stride = stride;
      lt.prev_context = context;
      if (cfg.variant == PyramidVariant::kCap) {
        lt.cap = view_.cap_level(static_cast<std::size_t>(l));
        lt.hao = hao(context, lt.input, *lt.cap);
        lt.output = lt.hao->output;
        lt.acu = acu(context, lt.output, lt.cap->beta());
        lt.context = lt.acu->context;
      } else {
        lt.residual = view_.residual_level(static_cast<std::size_t>(l));
        lt.residual_act = relu(conv1d(lt.input, *lt.residual));
        lt.output = lt.input;
        for (std::size_t i = 0; i < lt.output.data().size(); ++i)
          lt.output.data()[i] += lt.residual_act.data()[i];
        lt.context = init_context(lt.output);
      }
      context = lt.context;
      lt.heads = run_heads_traced(lt.output, heads_);
      levels_.push_back(std::move(lt));
    }
    prepared_ = nullptr;
    has_loss_ = false;
  }

  /// Full forward pass including the three loss terms.
  SampleLoss run(const PreparedSample& prep) {
    run_features(prep.sample->sequence.features);
    prepared_ = &prep;
    const auto& cfg = layout_->config();
    loss_ = {};
    loss_.cacl_skipped = true;

    std::size_t total_instants = 0;
    for (const auto& lt : levels_) total_instants += lt.output.rows();
    double cls_sum = 0.0, reg_sum = 0.0, cacl_sum = 0.0;
    std::size_t cacl_levels = 0;
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      auto& lt = levels_[l];
      const auto& mask = prep.masks[l];
      const auto& tg = prep.targets[l];
      const std::size_t n = lt.output.rows();
      lt.d_logit.assign(n, 0.0);
      lt.d_reg_raw = Matrix(n, 2);
      for (std::size_t t = 0; t < n; ++t) {
        const bool pos = mask.labels[t] != 0;
        const auto f = focal_term(lt.heads.cls.output(t, 0), pos, cfg.focal_gamma, cfg.focal_alpha);
        cls_sum += f.loss;
        lt.d_logit[t] = f.d_logit / static_cast<double>(total_instants);
        (pos ? loss_.positives : loss_.negatives)++;
      }
      for (std::size_t t = 0; t < n; ++t) {
        if (!tg.instants[t].positive) continue;
        const double pos = static_cast<double>(t);
        const double ds = std::exp(lt.heads.reg.output(t, 0));
        const double de = std::exp(lt.heads.reg.output(t, 1));
        const auto d = diou_term({pos - ds, pos + de},
                                 {pos - tg.instants[t].start_offset, pos + tg.instants[t].end_offset});
        reg_sum += d.loss;
        // store per-positive derivative w.r.t. the raw outputs; normalized below
        lt.d_reg_raw(t, 0) = -d.d_start * ds;
        lt.d_reg_raw(t, 1) = d.d_end * de;
      }
      if (cfg.variant == PyramidVariant::kCap) {
        lt.cacl = cacl_intra_with_grad(lt.context, lt.output, mask, cfg.temperature);
        if (!lt.cacl->terms.skipped) {
          cacl_sum += lt.cacl->terms.loss;
          ++cacl_levels;
        }
      }
    }
    loss_.cls = cls_sum / static_cast<double>(total_instants);
    if (loss_.positives > 0) {
      loss_.reg = reg_sum / static_cast<double>(loss_.positives);
      for (auto& lt : levels_)
        for (double& v : lt.d_reg_raw.data()) v /= static_cast<double>(loss_.positives);
    }
    if (cacl_levels > 0) {
      loss_.cacl = cacl_sum / static_cast<double>(cacl_levels);
      loss_.cacl_skipped = false;
    }
    cacl_levels_ = cacl_levels;
    has_loss_ = true;
    return loss_;
  }

  /// Accumulates weighted gradients of the recorded loss terms into `grad`
  /// (flat, same layout as the parameters). Optionally returns d/d input.
  void backward(const LossWeights& w, std::span<double> grad, Matrix* d_input = nullptr) const {
    if (!has_loss_) throw std::logic_error("backward called before a completed forward pass");
    if (grad.size() != layout_->total()) throw std::invalid_argument("backward: gradient size mismatch");
    const auto& cfg = layout_->config();
    GradSink sink(*layout_, grad);
    const std::size_t num = levels_.size();
    std::vector<Matrix> d_out(num);
    std::vector<Vector> d_ctx(num, Vector(cfg.input_dim, 0.0));
    for (std::size_t l = 0; l < num; ++l) d_out[l] = Matrix(levels_[l].output.rows(), cfg.input_dim);

    // heads and loss terms feeding each level
    for (std::size_t l = 0; l < num; ++l) {
      const auto& lt = levels_[l];
      const std::size_t n = lt.output.rows();
      Matrix d_cls(n, 1), d_reg(n, 2);
      for (std::size_t t = 0; t < n; ++t) {
        d_cls(t, 0) = w.cls * lt.d_logit[t];
        d_reg(t, 0) = w.reg * lt.d_reg_raw(t, 0);
        d_reg(t, 1) = w.reg * lt.d_reg_raw(t, 1);
      }
      auto gc = branch_backward(lt.output, heads_.cls, lt.heads.cls, d_cls);
      auto gr = branch_backward(lt.output, heads_.reg, lt.heads.reg, d_reg);
      sink.add_branch(layout_->cls(), gc);
      sink.add_branch(layout_->reg(), gr);
      for (std::size_t i = 0; i < d_out[l].data().size(); ++i)
        d_out[l].data()[i] += gc.input.data()[i] + gr.input.data()[i];
      if (lt.cacl && !lt.cacl->terms.skipped && w.cacl != 0.0 && cacl_levels_ > 0) {
        const double scale = w.cacl / static_cast<double>(cacl_levels_);
        for (std::size_t i = 0; i < d_out[l].data().size(); ++i)
          d_out[l].data()[i] += scale * lt.cacl->d_features.data()[i];
        for (std::size_t i = 0; i < cfg.input_dim; ++i) d_ctx[l][i] += scale * lt.cacl->d_context[i];
      }
    }

    Vector d_context0(cfg.input_dim, 0.0);
    Matrix d_x0;
    for (std::size_t li = num; li-- > 0;) {
      const auto& lt = levels_[li];
      const auto& lb = layout_->level(li);
      Matrix d_in;
      Vector& d_prev = li == 0 ? d_context0 : d_ctx[li - 1];
      if (cfg.variant == PyramidVariant::kCap) {
        const double beta = lt.cap->beta();
        auto ga = acu_backward(lt.prev_context, lt.output, beta, *lt.acu, d_ctx[li]);
        for (std::size_t i = 0; i < d_out[li].data().size(); ++i)
          d_out[li].data()[i] += ga.features.data()[i];
        for (std::size_t i = 0; i < cfg.input_dim; ++i) d_prev[i] += ga.prev_context[i];
        sink.add_scalar(lb.d, ga.beta * beta * (1.0 - beta));

        auto gh = hao_backward(lt.prev_context, lt.input, *lt.cap, *lt.hao, d_out[li]);
        sink.add(lb.a, gh.wq);
        sink.add(lb.b, gh.wk);
        sink.add(lb.c, gh.wv);
        for (std::size_t i = 0; i < cfg.input_dim; ++i) d_prev[i] += gh.context[i];
        d_in = std::move(gh.features);
      } else {
        Matrix d_act = d_out[li];
        relu_backward_inplace(lt.residual_act, d_act);
        auto gconv = conv1d_backward(lt.input, *lt.residual, d_act);
        sink.add(lb.a, gconv.weight);
        sink.add(lb.b, gconv.bias);
        d_in = d_out[li];
        for (std::size_t i = 0; i < d_in.data().size(); ++i) d_in.data()[i] += gconv.input.data()[i];
        // the baseline context is an unused, parameter-free mean
      }
      if (li > 0) {
        auto d_prev_out = downsample_backward(*lt.pool, levels_[li - 1].output.rows(), d_in);
        for (std::size_t i = 0; i < d_out[li - 1].data().size(); ++i)
          d_out[li - 1].data()[i] += d_prev_out.data()[i];
      } else {
        d_x0 = std::move(d_in);
      }
    }
    if (d_input) {
      const double inv = 1.0 / static_cast<double>(input_.rows());
      for (std::size_t t = 0; t < d_x0.rows(); ++t)
        for (std::size_t i = 0; i < cfg.input_dim; ++i) d_x0(t, i) += d_context0[i] * inv;
      *d_input = std::move(d_x0);
    }
  }

  std::vector<PyramidLevel> pyramid() const {
    std::vector<PyramidLevel> out;
    for (std::size_t l = 0; l < levels_.size(); ++l)
      out.push_back({static_cast<int>(l + 1), levels_[l].output, levels_[l].context, levels_[l].stride});
    return out;
  }

  std::vector<LevelPredictions> predictions() const {
    std::vector<LevelPredictions> out;
    for (std::size_t l = 0; l < levels_.size(); ++l)
      out.push_back(predictions_from_trace(static_cast<int>(l + 1), levels_[l].heads));
    return out;
  }

  std::size_t level_stride(std::size_t l) const { return levels_.at(l).stride; }
  /// HAO gate of level l; null for the convolution baseline.
  const ActivationMask* activation(std::size_t l) const {
    const auto& h = levels_.at(l).hao;
    return h ? &h->mask : nullptr;
  }
  const SampleLoss& loss() const {
    if (!has_loss_) throw std::logic_error("no loss recorded");
    return loss_;
  }

 private:
  struct LevelTrace {
    Matrix input;
    std::optional<DownsampleResult> pool;
    std::size_t stride = 1;
    Vector prev_context;
    std::optional<CapLevelParams> cap;
    std::optional<HaoResult> hao;
    std::optional<AcuResult> acu;
    std::optional<Conv1dParams> residual;
    Matrix residual_act;
    Matrix output;
    Vector context;
    HeadsTrace heads;
    Vector d_logit;
    Matrix d_reg_raw;
    std::optional<CaclIntra> cacl;
  };

  const ParamLayout* layout_;
  ParamView view_;
  HeadParams heads_;
  Matrix input_;
  Vector context0_;
  std::vector<LevelTrace> levels_;
  const PreparedSample* prepared_ = nullptr;
  SampleLoss loss_;
  std::size_t cacl_levels_ = 0;
  bool has_loss_ = false;
};

/// Per-sample objective: cls + phi1 * reg + phi2 * cacl.
inline double sample_objective(const SampleLoss& s, const ModelConfig& cfg) {
  return s.cls + cfg.phi1 * s.reg + (s.cacl_skipped ? 0.0 : cfg.phi2 * s.cacl);
}

/// Decodes every level and applies Soft-NMS.
inline std::vector<Proposal> predict_proposals(const ParamLayout& layout, std::span<const double> params,
                                               const FeatureSequence& seq) {
  const auto& cfg = layout.config();
  ForwardPass fp(layout, params);
  fp.run_features(seq.features);
  std::vector<Proposal> pool;
  const auto preds = fp.predictions();
  for (std::size_t l = 0; l < preds.size(); ++l) {
    auto props = decode(preds[l], fp.level_stride(l), seq.instants_per_second, seq.duration_seconds,
                        cfg.score_floor);
    pool.insert(pool.end(), props.begin(), props.end());
  }
  return soft_nms(std::move(pool), {cfg.softnms_sigma, cfg.score_floor, cfg.max_kept});
}

}  // namespace unicaclf
