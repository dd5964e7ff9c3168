#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include "tsan/data/dataset.hpp"
#include "tsan/nn/model.hpp"
#include "tsan/train/adam.hpp"
#include "tsan/train/checkpoint.hpp"

namespace tsan {

struct TrainConfig {
  int batch = 16;
  int patch = 48;  // LR patch extent
  double lr0 = 1e-4;
  long long halve_every_epochs = 200;
  long long epochs = 1000;
  long long iters_per_epoch = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  long long ckpt_every = 0;    // periodic checkpoint cadence in iterations; 0 = final only
  bool augment = true;
  long long total_iters = -1;  // -1: epochs * iters_per_epoch

  long long total() const { return total_iters >= 0 ? total_iters : epochs * iters_per_epoch; }

  void validate() const {
    contract(batch >= 1 && patch >= 1, "TrainConfig: batch and patch must be >= 1");
    contract(lr0 > 0 && beta1 > 0 && beta2 > 0 && eps > 0, "TrainConfig: rates must be positive");
    contract(iters_per_epoch >= 1 && halve_every_epochs >= 1, "TrainConfig: bad schedule");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"batch", batch},
                          {"patch", patch},
                          {"lr0", lr0},
                          {"halve_every_epochs", halve_every_epochs},
                          {"epochs", epochs},
                          {"iters_per_epoch", iters_per_epoch},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"eps", eps},
                          {"seed", seed},
                          {"ckpt_every", ckpt_every},
                          {"augment", augment}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch = j.at("batch").get<int>();
    c.patch = j.at("patch").get<int>();
    c.lr0 = j.at("lr0").get<double>();
    c.halve_every_epochs = j.at("halve_every_epochs").get<long long>();
    c.epochs = j.at("epochs").get<long long>();
    c.iters_per_epoch = j.at("iters_per_epoch").get<long long>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.ckpt_every = j.at("ckpt_every").get<long long>();
    c.augment = j.at("augment").get<bool>();
    return c;
  }
};

// Builds a model from a checkpoint's config echo and loads its tensors.
inline std::unique_ptr<TsanModel<float>> model_from_checkpoint(const LoadedCheckpoint& ck) {
  ModelConfig cfg = ModelConfig::from_json(ck.header.at("model"));
  auto model = std::make_unique<TsanModel<float>>(cfg, 0);
  apply_checkpoint(ck, model->params());
  return model;
}

// Adam training of the joint loss over random aligned patches. Fully
// deterministic under a fixed seed and thread count: one RNG drives sampling
// and augmentation, and its state rides along in every checkpoint so a
// resumed run replays the exact stream.
class Trainer {
 public:
  // Fresh run.
  Trainer(const ModelConfig& mc, const TrainConfig& tc, const DatasetManifest& manifest)
      : tcfg_(tc), sample_rng_(Rng::stream_seed(tc.seed, 1)) {
    tcfg_.validate();
    ModelConfig cfg = mc;
    cfg.rgb_mean = manifest.rgb_mean;
    contract(cfg.scale == manifest.scale, "Trainer: model scale disagrees with manifest scale");
    model_ = std::make_unique<TsanModel<float>>(cfg, tc.seed);
    sampler_ = std::make_unique<PatchSampler>(manifest, tc.patch);
  }

  // Resume: model config, tensors, counters and RNG state from the file.
  Trainer(const std::filesystem::path& ckpt, const TrainConfig& tc,
          const DatasetManifest& manifest)
      : tcfg_(tc), sample_rng_(0) {
    LoadedCheckpoint ck = load_checkpoint(ckpt);
    tcfg_ = TrainConfig::from_json(ck.header.at("train"));
    tcfg_.total_iters = tc.total_iters;  // the caller's new target
    tcfg_.ckpt_every = tc.ckpt_every;
    model_ = model_from_checkpoint(ck);
    contract(model_->config().scale == manifest.scale,
             "Trainer: checkpoint scale disagrees with manifest scale");
    iter_ = ck.header.at("iter").get<long long>();
    sample_rng_.deserialize(ck.header.at("rng").get<std::string>());
    sampler_ = std::make_unique<PatchSampler>(manifest, tcfg_.patch);
  }

  TsanModel<float>& model() { return *model_; }
  long long iteration() const { return iter_; }

  struct Result {
    long long iters_done = 0;
    double last_loss = 0;
  };

  // Runs until the configured total iteration count, appending one CSV row
  // per iteration: iter,epoch,lr,loss,loss_sr1,loss_sr2.
  Result run(const std::filesystem::path& out_ckpt, const std::filesystem::path& log_csv,
             bool verbose = false) {
    const long long total = tcfg_.total();
    std::ofstream log;
    if (!log_csv.empty()) {
      const bool fresh = iter_ == 0;
      log.open(log_csv, fresh ? std::ios::trunc : std::ios::app);
      if (!log) throw IoError(log_csv.string() + ": cannot open loss log");
      if (fresh) log << "iter,epoch,lr,loss,loss_sr1,loss_sr2\n";
    }

    Result res;
    Tensor<float> lr_batch, hr_batch;
    while (iter_ < total) {
      const long long iter = iter_ + 1;
      const long long epoch = (iter - 1) / tcfg_.iters_per_epoch;
      const double lr = lr_at(tcfg_.lr0, epoch, tcfg_.halve_every_epochs);

      sample_batch(*sampler_, sample_rng_, tcfg_.batch, tcfg_.augment, model_->config().rgb_mean,
                   lr_batch, hr_batch);
      Tape<float> tape;
      Value x = tape.leaf(lr_batch);
      Value gt = tape.leaf(hr_batch);
      auto out = model_->forward(tape, x);
      auto parts = model_->loss_parts(tape, out, gt);
      const double loss = tape.val(parts.joint).data[0];
      const double l1 = tape.val(parts.sr1).data[0];
      const double l2 = tape.val(parts.sr2).data[0];
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                           "; last-good checkpoint retained");
      tape.backward(parts.joint);
      adam_step(model_->params(), iter, lr, AdamConfig{tcfg_.beta1, tcfg_.beta2, tcfg_.eps});
      iter_ = iter;

      if (log) {
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.9g,%.9g,%.9g,%.9g\n", iter, epoch, lr, loss,
                      l1, l2);
        log << buf;
      }
      if (verbose && (iter % std::max<long long>(1, total / 10) == 0 || iter == total))
        std::printf("[train] iter %lld/%lld lr %.3g loss %.4f\n", iter, total, lr, loss);
      if (tcfg_.ckpt_every > 0 && iter % tcfg_.ckpt_every == 0 && iter != total)
        save(out_ckpt);
      res.iters_done = iter;
      res.last_loss = loss;
    }
    save(out_ckpt);
    return res;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json header{{"format", 1},
                          {"model", model_->config().to_json()},
                          {"train", tcfg_.to_json()},
                          {"iter", iter_},
                          {"rng", sample_rng_.serialize()}};
    save_checkpoint(path, header, model_->params());
  }

 private:
  TrainConfig tcfg_;
  std::unique_ptr<TsanModel<float>> model_;
  std::unique_ptr<PatchSampler> sampler_;
  Rng sample_rng_;
  long long iter_ = 0;
};

}  // namespace tsan
