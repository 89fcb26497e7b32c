#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "annoseg/augment.hpp"
#include "annoseg/error.hpp"
#include "annoseg/fcn/layers.hpp"
#include "annoseg/fcn/network.hpp"
#include "annoseg/parallel.hpp"

namespace annoseg::fcn {

/// v <- momentum * v + g;  p <- p - lr * v
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum) {
  require(lr >= 0.0, "learning rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require<ShapeError>(param.size() == grad.size() && param.size() == velocity.size(), "sgd size mismatch");
  const T m = static_cast<T>(momentum);
  const T a = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = m * velocity[i] + grad[i];
    param[i] -= a * velocity[i];
  }
}

template <typename T>
struct SgdState {
  Fcn8sParams<T> velocity;
  explicit SgdState(const NetworkConfig& cfg) : velocity(make_params<T>(cfg)) {}
};

template <typename T>
void sgd_step(Fcn8sParams<T>& params, const Fcn8sParams<T>& grads, double lr, double momentum, SgdState<T>& state) {
  auto p = params.named_tensors();
  const auto g = grads.named_tensors();
  auto v = state.velocity.named_tensors();
  for (std::size_t i = 0; i < p.size(); ++i)
    sgd_update<T>(p[i].second->values(), g[i].second->values(), v[i].second->values(), lr, momentum);
}

template <typename T>
void accumulate(Fcn8sParams<T>& into, const Fcn8sParams<T>& g) {
  auto a = into.named_tensors();
  const auto b = g.named_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i].second += *b[i].second;
}

template <typename T>
void scale(Fcn8sParams<T>& p, T s) {
  for (auto& [name, t] : p.named_tensors()) *t *= s;
}

struct TrainConfig {
  int steps = 2000;
  int batch = 1;
  double lr = 0.01;
  double momentum = 0.9;
  int threads = 1;
  std::uint64_t seed = 1;

  void validate() const {
    require(steps >= 0, "steps must be >= 0");
    require(batch >= 1, "batch must be >= 1");
    require(lr > 0.0, "learning rate must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
    require(threads >= 1, "threads must be >= 1");
  }
};

struct TrainingPage {
  RasterImage image;  // network input (color or binarized rendering)
  LabelMap labels;
};

using PatchSampler = std::function<Sample(const RasterImage&, const LabelMap&, Rng&)>;

class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(int step, double loss)
      : RuntimeFailure(annoseg::detail::concat("non-finite loss ", loss, " at step ", step)), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainResult {
  std::vector<double> loss_history;
};

/// Loss and parameter gradient of one batch. Items are evaluated in
/// parallel and reduced in index order, so the result does not depend on
/// the thread count.
template <typename T>
std::pair<double, Fcn8sParams<T>> batch_gradient(const Fcn8sParams<T>& params, const std::vector<Sample>& batch,
                                                 int threads) {
  const std::size_t n = batch.size();
  std::vector<LossSum<T>> losses(n);
  std::vector<Fcn8sParams<T>> grads(n);
  parallel_for(n, threads, [&](std::size_t i) {
    ForwardCache<T> cache;
    const Tensor<T> x = image_to_tensor<T>(batch[i].patch);
    const Tensor<T> logits = fcn8s_forward(params, x, &cache);
    losses[i] = softmax_ce_sum(logits, std::span<const LabelMap>(&batch[i].labels, 1));
    grads[i] = fcn8s_backward(params, cache, losses[i].grad);
    losses[i].grad = Tensor<T>();
  });
  double loss_sum = 0.0;
  std::size_t count = 0;
  Fcn8sParams<T> total = make_params<T>(params.config);
  for (std::size_t i = 0; i < n; ++i) {
    loss_sum += losses[i].loss_sum;
    count += losses[i].count;
    accumulate(total, grads[i]);
  }
  if (count == 0) return {0.0, std::move(total)};
  scale(total, static_cast<T>(1.0 / static_cast<double>(count)));
  return {loss_sum / static_cast<double>(count), std::move(total)};
}

/// SGD with momentum on sampler-drawn patches. `params` is updated in
/// place; if a step produces a non-finite loss, TrainingDiverged is thrown
/// and `params` holds the last finite state. `on_step(step, loss, params)`
/// runs after every update.
template <typename T>
TrainResult train(Fcn8sParams<T>& params, const std::vector<TrainingPage>& pages, const PatchSampler& sampler,
                  const TrainConfig& cfg,
                  const std::function<void(int, double, const Fcn8sParams<T>&)>& on_step = {}) {
  cfg.validate();
  require(!pages.empty(), "training needs at least one page");
  Rng rng(cfg.seed);
  SgdState<T> state(params.config);
  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
  std::uniform_int_distribution<std::size_t> pick(0, pages.size() - 1);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Sample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& page = pages[pick(rng)];
      batch.push_back(sampler(page.image, page.labels, rng));
    }
    auto [loss, grads] = batch_gradient(params, batch, cfg.threads);
    if (!std::isfinite(loss)) throw TrainingDiverged(step, loss);
    sgd_step(params, grads, cfg.lr, cfg.momentum, state);
    result.loss_history.push_back(loss);
    if (on_step) on_step(step, loss, params);
  }
  return result;
}

}  // namespace annoseg::fcn
