#include "ttae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace ttae {

namespace {

constexpr Real kProbEpsilon = Real(1e-7);

void check_probabilities(const char* what, const Tensor& p) {
    for (Real v : p.data()) {
        if (!(v >= 0 && v <= 1)) throw Error(std::string("adversarial_losses: ") + what + " probability outside [0, 1]");
    }
}

Tensor clamp_prob(const Tensor& p) { return clamp(p, kProbEpsilon, Real(1) - kProbEpsilon); }

// Re-raises a failure with the phase that produced it.
template <class F>
auto in_phase(const char* phase, std::int64_t step, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(std::string("training step ") + std::to_string(step) + ", phase " + phase + ": " + e.what());
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw Error("train config: epochs must be >= 1");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (checkpoint_every < 0) throw Error("train config: checkpoint_every must be >= 0");
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write train log '" + path.string() + "'");
    os << "epoch,recon_loss,disc_loss,gen_loss,recon_lr,adv_lr\n";
    os << std::setprecision(9);
    for (const auto& r : records) {
        os << r.epoch << ',' << r.recon_loss << ',' << r.disc_loss << ',' << r.gen_loss << ',' << r.recon_lr << ','
           << r.adv_lr << '\n';
    }
}

Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw Error("reconstruction_loss: shape mismatch " + to_string(x.shape()) + " vs " + to_string(x_hat.shape()));
    }
    return reduce_mean(square(sub(x, x_hat)));
}

Tensor discriminator_loss(const Tensor& d_prior, const Tensor& d_encoded) {
    check_probabilities("prior", d_prior);
    check_probabilities("encoded", d_encoded);
    const Tensor real_term = reduce_mean(log(clamp_prob(d_prior)));
    const Tensor fake_term = reduce_mean(log(add_scalar(neg(clamp_prob(d_encoded)), Real(1))));
    return neg(add(real_term, fake_term));
}

Tensor generator_loss(const Tensor& d_encoded) {
    check_probabilities("encoded", d_encoded);
    return neg(reduce_mean(log(clamp_prob(d_encoded))));
}

std::pair<Tensor, Tensor> adversarial_losses(const Tensor& d_prior, const Tensor& d_encoded) {
    return {discriminator_loss(d_prior, d_encoded), generator_loss(d_encoded)};
}

StepLosses train_step(const Tensor& batch, ModelBundle& bundle, Optimizers& opt, std::int64_t step,
                      const TrainConfig& cfg, Rng& rng) {
    StepLosses out;
    out.recon_lr = poly_decay_lr(step, cfg.recon_lr);
    out.adv_lr = poly_decay_lr(step, cfg.adv_lr);

    in_phase("reconstruction", step, [&] {
        Tape tape;
        const unsigned parts = kEncoder | kDecoder;
        Gradients grads;
        {
            const ModelBundle bound = bundle.bind(tape, parts);
            const Tensor loss = reconstruction_loss(batch, decode(bound, encode(bound, batch)));
            out.recon = loss.item();
            grads = tape.backward(loss);
        }
        adam_step(bundle.named_params(parts), grads, opt.recon, static_cast<Real>(out.recon_lr));
        return 0;
    });
    if (!cfg.adversarial) return out;

    const std::int64_t n = batch.dim(0);
    in_phase("discriminator", step, [&] {
        const Tensor z_encoded = encode(bundle, batch);
        const Tensor z_prior = rng.normal_tensor({n, bundle.config.latent_dim});
        Tape tape;
        Gradients grads;
        {
            const ModelBundle bound = bundle.bind(tape, kDiscriminator);
            const Tensor loss = discriminator_loss(discriminate(bound, z_prior), discriminate(bound, z_encoded));
            out.disc = loss.item();
            grads = tape.backward(loss);
        }
        adam_step(bundle.named_params(kDiscriminator), grads, opt.disc, static_cast<Real>(out.adv_lr));
        return 0;
    });

    in_phase("generator", step, [&] {
        Tape tape;
        Gradients grads;
        {
            const ModelBundle bound = bundle.bind(tape, kEncoder);
            const Tensor loss = generator_loss(discriminate(bound, encode(bound, batch)));
            out.gen = loss.item();
            grads = tape.backward(loss);
        }
        adam_step(bundle.named_params(kEncoder), grads, opt.gen, static_cast<Real>(out.adv_lr));
        return 0;
    });
    return out;
}

FitResult fit(const Tensor& dataset, const ModelConfig& model, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (dataset.rank() != 3 || dataset.dim(0) == 0) {
        throw Error("fit: dataset must be a non-empty [n, t, c] batch, got " + to_string(dataset.shape()));
    }
    for (Real v : dataset.data()) {
        if (v < 0 || v > 1) throw Error("fit: dataset must be normalized to [0, 1]");
    }

    const std::int64_t n = dataset.dim(0);
    const std::int64_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = batches * cfg.epochs;
    TrainConfig run = cfg;
    if (run.recon_lr.decay_steps == 0) run.recon_lr.decay_steps = total_steps;
    if (run.adv_lr.decay_steps == 0) run.adv_lr.decay_steps = total_steps;
    run.recon_lr.validate();
    run.adv_lr.validate();

    FitResult result{ModelBundle::initialize(model), {}};
    Optimizers opt;
    Rng rng(cfg.seed);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::int64_t step = 0;

    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::int64_t b = 0; b < batches; ++b) {
            const std::int64_t lo = b * cfg.batch_size;
            const std::int64_t hi = std::min(n, lo + cfg.batch_size);
            const Tensor batch = take_rows(dataset, std::span<const std::int64_t>(order.data() + lo, static_cast<std::size_t>(hi - lo)));
            StepLosses losses;
            try {
                losses = train_step(batch, result.bundle, opt, step, run, rng);
            } catch (const Error& e) {
                throw Error("epoch " + std::to_string(epoch) + ": " + e.what());
            }
            rec.recon_loss += losses.recon;
            rec.disc_loss += losses.disc;
            rec.gen_loss += losses.gen;
            rec.recon_lr = losses.recon_lr;
            rec.adv_lr = losses.adv_lr;
            ++step;
        }
        rec.recon_loss /= static_cast<double>(batches);
        rec.disc_loss /= static_cast<double>(batches);
        rec.gen_loss /= static_cast<double>(batches);
        for (double v : {rec.recon_loss, rec.disc_loss, rec.gen_loss}) {
            if (!std::isfinite(v)) throw Error("epoch " + std::to_string(epoch) + ": non-finite mean loss");
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.bundle.config.trained_steps = step;
        result.log.records.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            save_weights(result.bundle, cfg.checkpoint_dir / ("weights_epoch" + std::to_string(epoch) + ".ttae"));
        }
    }
    return result;
}

}  // namespace ttae
