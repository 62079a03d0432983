#pragma once

#include "ttae/aae.hpp"
#include "ttae/random.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

namespace ttae {

struct TrainConfig {
    std::int64_t epochs = 1000;
    std::int64_t batch_size = 64;
    /// decay_steps of 0 means "total optimizer steps of the run".
    LrSchedule recon_lr{0.005, 0.0001, 0.5, 0};
    LrSchedule adv_lr{0.001, 0.0001, 0.5, 0};
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 0;  // epochs; 0 disables
    std::filesystem::path checkpoint_dir;
    bool adversarial = true;

    void validate() const;
};

struct StepLosses {
    double recon = 0;
    double disc = 0;
    double gen = 0;
    double recon_lr = 0;
    double adv_lr = 0;
};

struct EpochRecord {
    std::int64_t epoch = 0;
    double recon_loss = 0;
    double disc_loss = 0;
    double gen_loss = 0;
    double recon_lr = 0;
    double adv_lr = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    /// Columns: epoch, recon_loss, disc_loss, gen_loss, recon_lr, adv_lr. Wall-clock time is left
    /// out so that reruns produce identical files.
    void write_csv(const std::filesystem::path& path) const;
};

struct Optimizers {
    AdamState recon;
    AdamState disc;
    AdamState gen;
};

/// Mean squared error over all elements.
Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat);

/// -mean[log d_prior] - mean[log(1 - d_encoded)].
Tensor discriminator_loss(const Tensor& d_prior, const Tensor& d_encoded);
/// -mean[log d_encoded].
Tensor generator_loss(const Tensor& d_encoded);
/// (discriminator loss, generator loss). Probabilities are clamped to [1e-7, 1 - 1e-7].
std::pair<Tensor, Tensor> adversarial_losses(const Tensor& d_prior, const Tensor& d_encoded);

/// Reconstruction update of encoder+decoder, then discriminator update against fresh
/// prior samples, then adversarial update of the encoder.
StepLosses train_step(const Tensor& batch, ModelBundle& bundle, Optimizers& opt, std::int64_t step,
                      const TrainConfig& cfg, Rng& rng);

struct FitResult {
    ModelBundle bundle;
    TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

FitResult fit(const Tensor& dataset, const ModelConfig& model, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

}  // namespace ttae
