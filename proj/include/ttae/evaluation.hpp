#pragma once

#include "ttae/layers.hpp"
#include "ttae/supervised.hpp"
#include "ttae/tensor.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ttae {

// ---------------------------------------------------------------- linear algebra

struct SymmetricEigen {
    Eigen::VectorXd values;   // descending
    Eigen::MatrixXd vectors;  // column j pairs with values[j]
    int sweeps = 0;
};

/// Cyclic Jacobi rotations. Throws if the off-diagonal mass has not vanished after max_sweeps.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& a, int max_sweeps = 100);

// ---------------------------------------------------------------- spectra

/// Forward DFT; the input length must be a power of two.
std::vector<std::complex<double>> fft(const std::vector<double>& x);

/// Mean one-sided magnitude spectrum over samples and channels, each series zero-padded
/// to the next power of two. Entry b is bin b for b in [0, N/2].
std::vector<double> mean_spectrum(const Tensor& x);

/// The k largest non-DC bins of mean_spectrum, strongest first.
std::vector<std::int64_t> fft_peaks(const Tensor& x, std::int64_t k);

// ---------------------------------------------------------------- embeddings and FID

/// Fixed random causal TCN used in place of a learned representation model.
struct EmbedderParams {
    std::uint64_t seed = 0;
    std::vector<Conv1dParams> layers;

    static constexpr std::int64_t kChannels = 64;
    static constexpr std::int64_t kKernelSize = 3;
    static constexpr std::int64_t kMinLength = 8;
};

/// Three causal conv layers (dilations 1, 2, 4) for series with `in_channels` channels.
EmbedderParams make_embedder(std::int64_t in_channels, std::uint64_t seed);

/// [n, t, c] -> [n, 64] by global average pooling of the last layer.
Tensor embed(const Tensor& x, const EmbedderParams& e);

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Sample mean and unbiased, symmetrized covariance of the rows of a [n, d] tensor.
GaussianFit gaussian_fit(const Tensor& embeddings);

double frechet(const GaussianFit& a, const GaussianFit& b);

/// Frechet distance between embedder statistics of two batches.
double fid_score(const Tensor& real, const Tensor& synth, std::uint64_t embed_seed);

// ---------------------------------------------------------------- post-hoc scores

struct PosthocOptions {
    FitBudget budget;  // 500 steps, batch 64, lr 1e-3
    std::int64_t classifier_hidden = 64;
    std::int64_t predictor_hidden = 256;
};

/// |test accuracy - 0.5| of a recurrent classifier separating real (1) from synthetic (0).
double discriminative_score(const Tensor& real, const Tensor& synth, std::uint64_t seed,
                            const PosthocOptions& opts = {});

enum class PredictiveVariant { LastStep, TimeGan };

std::string to_string(PredictiveVariant v);
PredictiveVariant parse_predictive_variant(const std::string& name);

/// Train on synthetic, test on real; returns 10 x MAE.
double predictive_score(const Tensor& real, const Tensor& synth, PredictiveVariant variant, std::uint64_t seed,
                        const PosthocOptions& opts = {});

// ---------------------------------------------------------------- projection

struct PcaResult {
    Eigen::MatrixXd coords;      // [n, 2]
    Eigen::MatrixXd components;  // [t*c, 2]
    Eigen::Vector2d eigenvalues;
    Eigen::VectorXd center;
};

/// Flattens each sample, centers, and projects onto the top two principal directions.
/// Each direction is signed so that its largest-magnitude loading is positive.
PcaResult pca_project_2d(const Tensor& x);

/// Projects further samples onto a fitted basis.
Eigen::MatrixXd pca_transform(const PcaResult& pca, const Tensor& x);

// ---------------------------------------------------------------- report

struct EvalSeeds {
    std::uint64_t embed = 0;
    std::uint64_t discriminative = 0;
    std::uint64_t predictive = 0;
};

struct EvalOptions {
    bool fid = true;
    bool discriminative = true;
    bool predictive = true;
    /// Predictive variants to run; timegan is skipped when the data has one channel.
    std::vector<PredictiveVariant> predictive_variants{PredictiveVariant::LastStep, PredictiveVariant::TimeGan};
    EvalSeeds seeds;
    PosthocOptions posthoc;
};

struct EvalReport {
    std::optional<double> fid;
    std::optional<double> discriminative;
    std::optional<double> predictive_last_step;
    std::optional<double> predictive_timegan;
    EvalSeeds seeds;
    std::int64_t n_real = 0;
    std::int64_t n_synth = 0;

    nlohmann::json to_json() const;
};

EvalReport evaluate(const Tensor& real, const Tensor& synth, const EvalOptions& opts);

}  // namespace ttae
