#include "ctvqa/decoder/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "ctvqa/numerics/random.hpp"

namespace ctvqa {

void TrainConfig::validate() const {
  if (learning_rate < 0.0 || batch_size < 1 || epochs < 0 || weight_decay < 0.0 ||
      !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("invalid training configuration");
  }
}

AdamW::AdamW(const ParamStore& params, const TrainConfig& cfg) : cfg_(cfg) {
  for (const auto& e : params.entries()) {
    m_.push_back(Tensor2::Zero(e.value.rows(), e.value.cols()));
    v_.push_back(Tensor2::Zero(e.value.rows(), e.value.cols()));
  }
}

void AdamW::step(ParamStore& params, std::span<const Tensor2> grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor2& theta = entries[i].value;
    const Tensor2& g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (cfg_.learning_rate == 0.0) continue;
    const auto update = (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.adam_eps);
    theta.array() -= cfg_.learning_rate * (update + cfg_.weight_decay * theta.array());
  }
}

LossGradient example_gradient(const ParamStore& params, const ModelConfig& cfg,
                              const TrainExample& ex) {
  Tape tape;
  const ParamBinding binding(tape, params);
  const Var loss = example_loss(binding, cfg, *ex.slices, *ex.question, *ex.answer);
  tape.backward(loss);
  return {loss.value()(0, 0), binding.gradients()};
}

TrainResult train(ParamStore& params, const ModelConfig& model_cfg,
                  std::span<const TrainExample> data, const TrainConfig& cfg,
                  const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw InputError("train: empty dataset");
  AdamW opt(params, cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;
  long batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor2> batch_grads;
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        LossGradient lg = example_gradient(params, model_cfg, data[order[i]]);
        batch_loss += lg.loss;
        if (batch_grads.empty()) {
          batch_grads = std::move(lg.grads);
        } else {
          for (std::size_t p = 0; p < batch_grads.size(); ++p) batch_grads[p] += lg.grads[p];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      double max_abs = 0.0;
      for (Tensor2& g : batch_grads) {
        g *= inv;
        max_abs = std::max(max_abs, g.cwiseAbs().maxCoeff());
      }
      if (!std::isfinite(batch_loss) || !std::isfinite(max_abs)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at batch " << batch_index << " (epoch "
            << epoch << "), max |grad| = " << max_abs;
        throw NumericError(msg.str());
      }
      opt.step(params, batch_grads);
      epoch_total += batch_loss;
      ++batch_index;
    }
    const double mean = epoch_total / static_cast<double>(order.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.steps = opt.steps();
  return result;
}

}  // namespace ctvqa
