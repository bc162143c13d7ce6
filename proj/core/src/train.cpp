#include "dgcn/train.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "dgcn/losses.hpp"

namespace dgcn {

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (!(poly_power > 0)) throw ConfigError("poly_power must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
}

double poly_lr(std::size_t iter, std::size_t total, double base, double power) {
  if (iter > total) throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) + " beyond total " + std::to_string(total));
  if (total == 0) return base;
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

std::string format_miou(double miou) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", miou);
  return buf;
}

void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows) {
  os << "iter,lr,loss,val_miou\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,", r.iter, r.lr, r.loss);
    os << buf << format_miou(r.val_miou) << '\n';
  }
}

template <typename T>
SgdMomentum<T>::SgdMomentum(ParamList<T> params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& p : params) {
    if (!p.trainable) continue;
    velocity_.emplace_back(p.tensor.numel(), T(0));
    params_.push_back(std::move(p));
  }
}

template <typename T>
void SgdMomentum<T>::step(double lr) {
  const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    auto w = t.mutable_data();
    auto g = t.node()->grad;
    auto& v = velocity_[i];
    const bool has = !g.empty();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T grad = (has ? g[j] : T(0)) + wd * w[j];
      v[j] = mu * v[j] + grad;
      w[j] -= rate * v[j];
    }
    check_finite<T>(w, params_[i].name.c_str());
    t.zero_grad();
  }
}

template <typename T>
TrainResult<T> train(const SegModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<ToySample>& train_set,
                     const std::vector<ToySample>& val_set, const ProgressFn& progress) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  Rng init_rng(cfg.seed);
  TrainResult<T> result{SegModel<T>::init(model_cfg, init_rng), {}};
  auto& model = result.model;
  SgdMomentum<T> optimizer(model.parameters(), cfg.momentum, cfg.weight_decay);
  Rng order_rng = Rng(cfg.seed).fork(0x5EED);

  double loss_acc = 0;
  std::size_t loss_count = 0;
  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    const double lr = poly_lr(iter, cfg.iterations, cfg.base_lr, cfg.poly_power);
    double batch_loss = 0;
    try {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto& sample = train_set[order_rng.below(train_set.size())];
        auto logits = model.forward(image_as<T>(sample.image), true);
        auto loss = cfg.ohem_k ? ohem_loss(logits, sample.labels, cfg.ohem_k) : cross_entropy(logits, sample.labels);
        if (cfg.batch_size > 1) loss = scale(loss, T(1) / static_cast<T>(cfg.batch_size));
        loss.backward();
        batch_loss += static_cast<double>(loss.item());
      }
      optimizer.step(lr);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(iter) + " (lr " + std::to_string(lr) +
                         "): " + e.what());
    }
    loss_acc += batch_loss;
    ++loss_count;
    const bool last = iter + 1 == cfg.iterations;
    if ((iter + 1) % cfg.eval_interval == 0 || last) {
      LogRow row{iter + 1, lr, loss_acc / static_cast<double>(loss_count),
                 val_set.empty() ? 0.0 : evaluate(model, val_set).mean};
      result.log.push_back(row);
      if (progress) progress(row);
      loss_acc = 0;
      loss_count = 0;
    }
  }
  return result;
}

template class SgdMomentum<float>;
template class SgdMomentum<double>;
template TrainResult<float> train(const SegModelConfig&, const TrainConfig&, const std::vector<ToySample>&,
                                  const std::vector<ToySample>&, const ProgressFn&);
template TrainResult<double> train(const SegModelConfig&, const TrainConfig&, const std::vector<ToySample>&,
                                   const std::vector<ToySample>&, const ProgressFn&);

}  // namespace dgcn
