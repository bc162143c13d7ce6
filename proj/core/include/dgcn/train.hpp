#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "dgcn/seg_model.hpp"

namespace dgcn {

struct TrainConfig {
  double base_lr = 0.01;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::size_t iterations = 4000;
  std::size_t batch_size = 1;
  std::size_t ohem_k = 0;  // 0 disables OHEM
  std::size_t eval_interval = 500;
  std::uint64_t seed = 1;

  void validate() const;
};

/// base * (1 - iter/total)^power; throws std::invalid_argument for iter > total.
double poly_lr(std::size_t iter, std::size_t total, double base, double power = 0.9);

struct LogRow {
  std::size_t iter = 0;
  double lr = 0;
  double loss = 0;  // mean training loss since the previous row
  double val_miou = 0;
};

void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows);
/// The exact text used for the val_miou column, so eval output can be compared digit for digit.
std::string format_miou(double miou);

template <typename T>
struct TrainResult {
  SegModel<T> model;
  std::vector<LogRow> log;
};

using ProgressFn = std::function<void(const LogRow&)>;

/// SGD with momentum and weight decay under the poly schedule. Each iteration draws
/// `batch_size` training samples (seeded), averages their losses and takes one step.
/// Samples run through the network one at a time, so BN statistics are per sample.
/// Throws NumericError naming the iteration if the loss stops being finite.
template <typename T>
TrainResult<T> train(const SegModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<ToySample>& train_set,
                     const std::vector<ToySample>& val_set, const ProgressFn& progress = {});

/// One optimizer step over the current gradients of `params` (SGD + momentum + weight decay), then zeroes them.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(ParamList<T> params, double momentum, double weight_decay);
  void step(double lr);

 private:
  ParamList<T> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace dgcn
