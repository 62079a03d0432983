#pragma once

#include "ttae/optim.hpp"
#include "ttae/time_transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ttae {

struct ModelConfig {
    std::int64_t length = 24;
    std::int64_t channels = 5;
    std::int64_t latent_dim = 8;
    std::int64_t num_blocks = 2;
    std::int64_t num_heads = 3;
    std::int64_t head_size = 64;
    std::int64_t kernel_size = 4;
    std::int64_t seed_channels = 32;
    std::int64_t disc_hidden = 32;
    std::vector<std::int64_t> encoder_filters{64, 128, 256};
    std::vector<std::int64_t> decoder_filters{128, 64};
    DecoderVariant variant = DecoderVariant::Full;
    AttentionScaling scaling = AttentionScaling::PerHead;
    bool sublayer_residual = true;
    std::uint64_t init_seed = 0;
    std::int64_t trained_steps = 0;

    /// Latent width used when none is given: 8 up to 24 steps, 16 beyond.
    static std::int64_t default_latent_dim(std::int64_t length);

    void validate() const;
    TimeTransformerConfig refiner_config() const;

    /// key=value lines, one per field.
    std::string serialize() const;
    static ModelConfig parse(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

struct EncoderParams {
    std::vector<Conv1dParams> convs;
    DenseParams to_latent;
};

struct DecoderParams {
    DenseParams to_seed;
    std::vector<TConv1dParams> deconvs;
    DenseParams to_prototype;
    RefinerParams refiner;
};

struct DiscriminatorParams {
    DenseParams hidden1;
    DenseParams hidden2;
    DenseParams out;
};

enum ModelPart : unsigned {
    kEncoder = 1u,
    kDecoder = 2u,
    kDiscriminator = 4u,
    kAllParts = 7u,
};

struct ModelBundle {
    ModelConfig config;
    EncoderParams encoder;
    DecoderParams decoder;
    DiscriminatorParams discriminator;

    static ModelBundle initialize(const ModelConfig& config);

    /// Visits parameters of the selected parts in a fixed order with stable names.
    void for_each_param(unsigned parts, const ParamVisitor& visit);
    std::vector<NamedParam> named_params(unsigned parts);
    std::int64_t parameter_count(unsigned parts = kAllParts) const;

    /// Copy whose parameters are leaves on `tape`, keyed by parameter name.
    ModelBundle bind(Tape& tape, unsigned parts) const;

    bool same_weights(const ModelBundle& other) const;
};

/// x [n, length, channels] -> codes [n, latent_dim].
Tensor encode(const ModelBundle& m, const Tensor& x);
/// Codes -> de-convolutional prototype [n, length, channels] (before any refinement).
Tensor prototype(const ModelBundle& m, const Tensor& z);
/// Codes -> series in (0, 1).
Tensor decode(const ModelBundle& m, const Tensor& z);
/// Codes -> probability of being a prior sample [n, 1].
Tensor discriminate(const ModelBundle& m, const Tensor& z);
/// n samples decoded from standard-normal codes drawn with `seed`.
Tensor generate(const ModelBundle& m, std::int64_t n, std::uint64_t seed);
Tensor sample_prior(std::int64_t n, std::int64_t latent_dim, std::uint64_t seed);

void save_weights(const ModelBundle& m, const std::filesystem::path& path);
ModelBundle load_weights(const std::filesystem::path& path);

}  // namespace ttae
