#include "ttae/evaluation.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ttae {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw Error(message);
}

void require_batch(const char* op, const Tensor& x) {
    require(x.rank() == 3, std::string(op) + ": expected an [n, t, c] batch, got " + to_string(x.shape()));
}

Eigen::MatrixXd to_matrix(const Tensor& x) {
    require(x.rank() >= 2, "expected at least a rank-2 tensor, got " + to_string(x.shape()));
    const std::int64_t n = x.dim(0);
    const std::int64_t d = n == 0 ? 0 : x.size() / n;
    Eigen::MatrixXd m(n, d);
    const auto v = x.data();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) m(i, j) = static_cast<double>(v[static_cast<std::size_t>(i * d + j)]);
    return m;
}

std::int64_t next_pow2(std::int64_t n) {
    std::int64_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

constexpr std::int64_t kEvalChunk = 256;

// Applies `f` to consecutive row blocks of x and concatenates the results.
template <class F>
Tensor map_chunks(const Tensor& x, F&& f) {
    std::vector<Tensor> parts;
    for (std::int64_t start = 0; start < x.dim(0); start += kEvalChunk) {
        parts.push_back(f(slice(x, 0, start, std::min(kEvalChunk, x.dim(0) - start))));
    }
    return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Tensor rows_of(const Tensor& x, std::span<const std::int64_t> idx) { return take_rows(x, idx); }

}  // namespace

// ---------------------------------------------------------------- linear algebra

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& input, int max_sweeps) {
    require(input.rows() == input.cols(), "jacobi_eigen: matrix must be square");
    require(input.allFinite(), "jacobi_eigen: matrix has non-finite entries");
    require(((input - input.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, input.cwiseAbs().maxCoeff())),
            "jacobi_eigen: matrix is not symmetric");
    const Eigen::Index n = input.rows();
    Eigen::MatrixXd a = (input + input.transpose()) / 2;
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    const double total = a.squaredNorm();

    auto off_diagonal = [&] {
        double s = 0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) s += a(p, q) * a(p, q);
        return s;
    };

    SymmetricEigen out;
    bool converged = false;
    for (int sweep = 0; sweep <= max_sweeps; ++sweep) {
        const double off = off_diagonal();
        if (off <= 1e-26 * total || off == 0.0) {
            converged = true;
            out.sweeps = sweep;
            break;
        }
        if (sweep == max_sweeps) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        throw Error("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) + " sweeps");
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        out.values(j) = a(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(j)]);
        out.vectors.col(j) = v.col(order[static_cast<std::size_t>(j)]);
    }
    return out;
}

// ---------------------------------------------------------------- spectra

std::vector<std::complex<double>> fft(const std::vector<double>& x) {
    const auto n = static_cast<std::int64_t>(x.size());
    require(n >= 1 && (n & (n - 1)) == 0, "fft: length " + std::to_string(n) + " is not a power of two");
    Eigen::FFT<double> engine;
    std::vector<std::complex<double>> out;
    engine.fwd(out, x);
    return out;
}

std::vector<double> mean_spectrum(const Tensor& x) {
    require_batch("mean_spectrum", x);
    const std::int64_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
    require(t >= 4, "mean_spectrum: series length must be >= 4, got " + std::to_string(t));
    require(n >= 1 && c >= 1, "mean_spectrum: empty batch");
    const std::int64_t len = next_pow2(t);
    std::vector<double> mean(static_cast<std::size_t>(len / 2 + 1), 0.0);
    std::vector<double> series(static_cast<std::size_t>(len));
    const auto v = x.data();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            std::fill(series.begin(), series.end(), 0.0);
            for (std::int64_t k = 0; k < t; ++k) series[static_cast<std::size_t>(k)] = v[static_cast<std::size_t>((i * t + k) * c + ch)];
            const auto spec = fft(series);
            for (std::size_t b = 0; b < mean.size(); ++b) mean[b] += std::abs(spec[b]);
        }
    for (auto& m : mean) m /= static_cast<double>(n * c);
    return mean;
}

std::vector<std::int64_t> fft_peaks(const Tensor& x, std::int64_t k) {
    const auto spec = mean_spectrum(x);
    const auto bins = static_cast<std::int64_t>(spec.size()) - 1;
    require(k >= 1 && k <= bins, "fft_peaks: k must lie in [1, " + std::to_string(bins) + "]");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(bins));
    std::iota(idx.begin(), idx.end(), 1);
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return spec[static_cast<std::size_t>(a)] > spec[static_cast<std::size_t>(b)];
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

// ---------------------------------------------------------------- embeddings and FID

EmbedderParams make_embedder(std::int64_t in_channels, std::uint64_t seed) {
    require(in_channels >= 1, "make_embedder: in_channels must be >= 1");
    EmbedderParams e;
    e.seed = seed;
    Rng rng(seed);
    std::int64_t in = in_channels;
    for (std::int64_t dilation : {1, 2, 4}) {
        e.layers.push_back(init_conv1d(rng, in, EmbedderParams::kChannels, EmbedderParams::kKernelSize, 1, dilation, true));
        in = EmbedderParams::kChannels;
    }
    return e;
}

Tensor embed(const Tensor& x, const EmbedderParams& e) {
    require_batch("embed", x);
    require(!e.layers.empty(), "embed: embedder has no layers");
    require(x.dim(1) >= EmbedderParams::kMinLength,
            "embed: series length " + std::to_string(x.dim(1)) + " is below the minimum of " +
                std::to_string(EmbedderParams::kMinLength));
    require(x.dim(2) == e.layers.front().weight.dim(1),
            "embed: embedder expects " + std::to_string(e.layers.front().weight.dim(1)) + " channels, got " +
                std::to_string(x.dim(2)));
    if (x.dim(0) == 0) return Tensor::zeros({0, EmbedderParams::kChannels});
    return map_chunks(x, [&](const Tensor& chunk) {
        Tensor h = chunk;
        for (const auto& layer : e.layers) h = conv1d_forward(h, layer, Activation::Relu);
        return reduce_mean(h, 1);
    });
}

GaussianFit gaussian_fit(const Tensor& embeddings) {
    require(embeddings.rank() == 2, "gaussian_fit: expected [n, d] embeddings, got " + to_string(embeddings.shape()));
    require(embeddings.dim(0) >= 2, "gaussian_fit: need at least 2 samples, got " + std::to_string(embeddings.dim(0)));
    const Eigen::MatrixXd m = to_matrix(embeddings);
    GaussianFit f;
    f.mean = m.colwise().mean().transpose();
    const Eigen::MatrixXd centered = m.rowwise() - f.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m.rows() - 1);
    f.cov = (cov + cov.transpose()) / 2;
    return f;
}

double frechet(const GaussianFit& a, const GaussianFit& b) {
    require(a.mean.size() == b.mean.size() && a.cov.rows() == a.mean.size() && b.cov.rows() == b.mean.size(),
            "frechet: dimension mismatch (" + std::to_string(a.mean.size()) + " vs " + std::to_string(b.mean.size()) + ")");
    const SymmetricEigen ea = jacobi_eigen(a.cov);
    const Eigen::VectorXd root = ea.values.cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd a_half = ea.vectors * root.asDiagonal() * ea.vectors.transpose();
    Eigen::MatrixXd inner = a_half * b.cov * a_half;
    inner = (inner + inner.transpose()) / 2;
    const SymmetricEigen ei = jacobi_eigen(inner);
    const double trace_sqrt = ei.values.cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2 * trace_sqrt;
    return std::max(d, 0.0);
}

double fid_score(const Tensor& real, const Tensor& synth, std::uint64_t embed_seed) {
    require_batch("fid", real);
    require_batch("fid", synth);
    require(real.dim(2) == synth.dim(2), "fid: channel counts differ");
    const EmbedderParams e = make_embedder(real.dim(2), embed_seed);
    return frechet(gaussian_fit(embed(real, e)), gaussian_fit(embed(synth, e)));
}

// ---------------------------------------------------------------- post-hoc scores

namespace {

void require_pair(const char* op, const Tensor& real, const Tensor& synth) {
    require_batch(op, real);
    require_batch(op, synth);
    require(real.dim(1) == synth.dim(1) && real.dim(2) == synth.dim(2),
            std::string(op) + ": real " + to_string(real.shape()) + " and synthetic " + to_string(synth.shape()) +
                " differ in length or channels");
}

Tensor labels_of(std::int64_t n, Real value) { return Tensor::full({n, 1}, value); }

// Per-channel mean and standard deviation (floored at 1e-3) over all samples and steps.
std::pair<Tensor, Tensor> channel_moments(const Tensor& x) {
    const auto c = static_cast<std::size_t>(x.dim(-1));
    std::vector<double> s1(c, 0.0), s2(c, 0.0);
    const auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        s1[i % c] += v[i];
        s2[i % c] += static_cast<double>(v[i]) * v[i];
    }
    const double count = static_cast<double>(v.size() / c);
    std::vector<Real> mean(c), sd(c);
    for (std::size_t j = 0; j < c; ++j) {
        const double m = s1[j] / count;
        mean[j] = static_cast<Real>(m);
        sd[j] = static_cast<Real>(std::sqrt(std::max(s2[j] / count - m * m, 0.0)) + 1e-3);
    }
    const auto n = static_cast<std::int64_t>(c);
    return {Tensor({n}, std::move(mean)), Tensor({n}, std::move(sd))};
}

}  // namespace

double discriminative_score(const Tensor& real, const Tensor& synth, std::uint64_t seed, const PosthocOptions& opts) {
    require_pair("discriminative_score", real, synth);
    constexpr std::int64_t kMinPerSide = 40;
    require(real.dim(0) >= kMinPerSide && synth.dim(0) >= kMinPerSide,
            "discriminative_score: need at least " + std::to_string(kMinPerSide) + " samples per side, got " +
                std::to_string(real.dim(0)) + " real and " + std::to_string(synth.dim(0)) + " synthetic");
    Rng rng(seed);

    // Stratified split: 20% of each side is held out.
    auto split = [&](std::int64_t n) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        const std::int64_t n_test = n / 5;
        return std::pair{std::vector<std::int64_t>(idx.begin() + n_test, idx.end()),
                         std::vector<std::int64_t>(idx.begin(), idx.begin() + n_test)};
    };
    const auto [real_train, real_test] = split(real.dim(0));
    const auto [synth_train, synth_test] = split(synth.dim(0));

    const Tensor x_train = concat({rows_of(real, real_train), rows_of(synth, synth_train)}, 0);
    const Tensor y_train = concat({labels_of(static_cast<std::int64_t>(real_train.size()), 1),
                                   labels_of(static_cast<std::int64_t>(synth_train.size()), 0)},
                                  0);
    RecurrentParams model = init_recurrent(rng, real.dim(2), opts.classifier_hidden, 1);
    auto logits = [](const Tensor& x, const RecurrentParams& p) { return dense_forward(recurrent_forward(x, p).final_state, p.head); };
    fit_params(model, "classifier", x_train.dim(0), opts.budget, rng,
               [&](const RecurrentParams& p, std::span<const std::int64_t> idx) {
                   return bce_with_logits(logits(rows_of(x_train, idx), p), rows_of(y_train, idx));
               });

    std::int64_t correct = 0;
    auto count = [&](const Tensor& x, Real label) {
        const Tensor z = map_chunks(x, [&](const Tensor& chunk) { return logits(chunk, model); });
        for (Real v : z.data()) correct += ((v > 0) == (label > 0)) ? 1 : 0;
    };
    count(rows_of(real, real_test), 1);
    count(rows_of(synth, synth_test), 0);
    const double accuracy =
        static_cast<double>(correct) / static_cast<double>(real_test.size() + synth_test.size());
    return std::abs(accuracy - 0.5);
}

std::string to_string(PredictiveVariant v) { return v == PredictiveVariant::LastStep ? "last_step" : "timegan"; }

PredictiveVariant parse_predictive_variant(const std::string& name) {
    if (name == "last_step") return PredictiveVariant::LastStep;
    if (name == "timegan") return PredictiveVariant::TimeGan;
    throw Error("unknown predictive variant '" + name + "' (expected last_step or timegan)");
}

double predictive_score(const Tensor& real, const Tensor& synth, PredictiveVariant variant, std::uint64_t seed,
                        const PosthocOptions& opts) {
    require_pair("predictive_score", real, synth);
    const std::int64_t t = real.dim(1), c = real.dim(2);
    require(t >= 2, "predictive_score: series length must be >= 2");
    require(real.dim(0) >= 1 && synth.dim(0) >= 1, "predictive_score: empty batch");
    if (variant == PredictiveVariant::TimeGan) {
        require(c >= 2, "predictive_score: the timegan variant needs at least 2 channels, got " + std::to_string(c));
    }

    // (inputs, targets) for one batch under the chosen protocol.
    auto make_io = [&](const Tensor& x) -> std::pair<Tensor, Tensor> {
        if (variant == PredictiveVariant::LastStep) {
            return {slice(x, 1, 0, t - 1), reshape(slice(x, 1, t - 1, 1), {x.dim(0), c})};
        }
        return {slice(slice(x, 1, 0, t - 1), 2, 0, c - 1), slice(slice(x, 1, 1, t - 1), 2, c - 1, 1)};
    };
    const std::int64_t in_channels = variant == PredictiveVariant::LastStep ? c : c - 1;
    const std::int64_t outputs = variant == PredictiveVariant::LastStep ? c : 1;
    const auto [x_train, y_train] = make_io(synth);

    // Inputs are standardized with training statistics; the last-step head predicts a
    // standardized increment over the final observed step.
    const auto [mean, stddev] = channel_moments(x_train);
    auto predict = [&](const Tensor& x, const RecurrentParams& p) {
        const RecurrentOutput r = recurrent_forward(div(sub(x, mean), stddev), p);
        if (variant == PredictiveVariant::TimeGan) return dense_forward(r.sequence, p.head, Activation::Sigmoid);
        const Tensor last = reshape(slice(x, 1, x.dim(1) - 1, 1), {x.dim(0), c});
        return add(last, mul(dense_forward(r.final_state, p.head), stddev));
    };

    Rng rng(seed);
    RecurrentParams model = init_recurrent(rng, in_channels, opts.predictor_hidden, outputs);
    fit_params(model, "predictor", x_train.dim(0), opts.budget, rng,
               [&](const RecurrentParams& p, std::span<const std::int64_t> idx) {
                   return reduce_mean(square(sub(predict(rows_of(x_train, idx), p), rows_of(y_train, idx))));
               });

    const auto [x_test, y_test] = make_io(real);
    const Tensor pred = map_chunks(x_test, [&](const Tensor& chunk) { return predict(chunk, model); });
    double total = 0;
    const auto pv = pred.data();
    const auto yv = y_test.data();
    for (std::size_t i = 0; i < pv.size(); ++i) total += std::abs(static_cast<double>(pv[i]) - static_cast<double>(yv[i]));
    return 10.0 * total / static_cast<double>(pv.size());
}

// ---------------------------------------------------------------- projection

PcaResult pca_project_2d(const Tensor& x) {
    require(x.rank() >= 2, "pca_project_2d: expected a batch, got " + to_string(x.shape()));
    require(x.dim(0) >= 3, "pca_project_2d: need at least 3 samples, got " + std::to_string(x.dim(0)));
    const Eigen::MatrixXd m = to_matrix(x);
    require(m.cols() >= 2, "pca_project_2d: need at least 2 features per sample");
    PcaResult out;
    out.center = m.colwise().mean().transpose();
    const Eigen::MatrixXd centered = m.rowwise() - out.center.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m.rows() - 1);
    require(cov.trace() > 1e-12, "pca_project_2d: data has zero variance");
    const SymmetricEigen eig = jacobi_eigen((cov + cov.transpose()) / 2);
    out.components = eig.vectors.leftCols(2);
    for (Eigen::Index j = 0; j < 2; ++j) {
        Eigen::Index arg = 0;
        out.components.col(j).cwiseAbs().maxCoeff(&arg);
        if (out.components(arg, j) < 0) out.components.col(j) *= -1;
    }
    out.eigenvalues = eig.values.head(2).cwiseMax(0.0);
    out.coords = centered * out.components;
    return out;
}

Eigen::MatrixXd pca_transform(const PcaResult& pca, const Tensor& x) {
    const Eigen::MatrixXd m = to_matrix(x);
    require(m.cols() == pca.center.size(), "pca_transform: feature count does not match the fitted basis");
    return (m.rowwise() - pca.center.transpose()) * pca.components;
}

// ---------------------------------------------------------------- report

nlohmann::json EvalReport::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {
        {"fid", opt(fid)},
        {"discriminative", opt(discriminative)},
        {"predictive_last_step", opt(predictive_last_step)},
        {"predictive_timegan", opt(predictive_timegan)},
        {"seeds", {{"embed", seeds.embed}, {"discriminative", seeds.discriminative}, {"predictive", seeds.predictive}}},
        {"n_real", n_real},
        {"n_synth", n_synth},
    };
}

EvalReport evaluate(const Tensor& real, const Tensor& synth, const EvalOptions& opts) {
    require_pair("evaluate", real, synth);
    EvalReport r;
    r.seeds = opts.seeds;
    r.n_real = real.dim(0);
    r.n_synth = synth.dim(0);
    if (opts.fid) r.fid = fid_score(real, synth, opts.seeds.embed);
    if (opts.discriminative) r.discriminative = discriminative_score(real, synth, opts.seeds.discriminative, opts.posthoc);
    if (opts.predictive) {
        for (auto v : opts.predictive_variants) {
            if (v == PredictiveVariant::TimeGan) {
                if (real.dim(2) < 2) continue;
                r.predictive_timegan = predictive_score(real, synth, v, opts.seeds.predictive, opts.posthoc);
            } else {
                r.predictive_last_step = predictive_score(real, synth, v, opts.seeds.predictive, opts.posthoc);
            }
        }
    }
    return r;
}

}  // namespace ttae
