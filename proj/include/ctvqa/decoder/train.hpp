#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ctvqa/decoder/model.hpp"

namespace ctvqa {

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 16;
  int epochs = 3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Adam with decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps)
/// + weight_decay * theta).
class AdamW {
 public:
  AdamW(const ParamStore& params, const TrainConfig& cfg);

  void step(ParamStore& params, std::span<const Tensor2> grads);
  long steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<Tensor2> m_;
  std::vector<Tensor2> v_;
  long t_ = 0;
};

/// Views into a dataset; the pointed-to data must outlive training.
struct TrainExample {
  const std::vector<Tensor2>* slices;
  const std::vector<int>* question;
  const std::vector<int>* answer;
};

struct LossGradient {
  double loss = 0.0;
  std::vector<Tensor2> grads;
};

/// Loss and parameter gradients for one example.
LossGradient example_gradient(const ParamStore& params, const ModelConfig& cfg,
                              const TrainExample& ex);

struct TrainResult {
  /// Mean example loss per epoch.
  std::vector<double> epoch_loss;
  long steps = 0;
};

/// End-to-end AdamW over every parameter; example order is reshuffled each
/// epoch from cfg.seed. A batch gradient is the mean of per-example gradients
/// summed in batch order. Throws NumericError (with batch index and max |grad|)
/// on a non-finite loss.
TrainResult train(ParamStore& params, const ModelConfig& model_cfg,
                  std::span<const TrainExample> data, const TrainConfig& cfg,
                  const std::function<void(int epoch, double mean_loss)>& on_epoch = {});

}  // namespace ctvqa
