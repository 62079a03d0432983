// End-to-end acceptance checks. Prints one PASS or FAIL line per criterion.
// Exit status is the number of failed gating criteria.
#include "cli.hpp"
#include "ttae/aae.hpp"
#include "ttae/augmentation.hpp"
#include "ttae/datasets.hpp"
#include "ttae/evaluation.hpp"
#include "ttae/layers.hpp"
#include "ttae/time_transformer.hpp"
#include "ttae/training.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace ttae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    /// False when the criterion cannot be evaluated as specified on this host; reported but not gating.
    bool gating = true;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

bool same_values(const Tensor& a, const Tensor& b) { return a.same_values(b); }

bool throws(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception&) {
        return true;
    }
    return false;
}

class Scratch {
public:
    Scratch() : path_(fs::temp_directory_path() / "ttae_acceptance") {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    fs::path path_;
};

// ---------------------------------------------------------------- 1

Outcome gradient_checks() {
    const fs::path log = fs::temp_directory_path() / "ttae_gradcheck.log";
    const std::string cmd = std::string("\"") + TTAE_GRADCHECK_BIN + "\" > \"" + log.string() + "\" 2>&1";
    const auto t0 = Clock::now();
    const int status = std::system(cmd.c_str());
    const double secs = seconds_since(t0);
    std::string summary;
    std::istringstream lines(slurp(log));
    for (std::string line; std::getline(lines, line);)
        if (line.rfind("[  PASSED  ]", 0) == 0 || line.rfind("[  FAILED  ]", 0) == 0) summary = line.substr(13);
    fs::remove(log);
    return {status == 0 && secs < 60, "double-precision gradient checks " + summary + " in " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 2

CrossAttentionParams scalar_fusion(const std::array<double, 7>& w) {
    auto make = [&](double q, double k, double v) {
        AttentionParams p;
        p.num_heads = 1;
        p.head_size = 1;
        p.query = {Tensor({1, 1}, {static_cast<Real>(q)}), std::nullopt};
        p.key = {Tensor({1, 1}, {static_cast<Real>(k)}), std::nullopt};
        p.value = {Tensor({1, 1}, {static_cast<Real>(v)}), std::nullopt};
        p.output = {Tensor({1, 1}, {static_cast<Real>(w[6])}), std::nullopt};
        return p;
    };
    return {make(w[0], w[1], w[2]), make(w[3], w[4], w[5])};
}

/// out_i = q_i + wo * sum_k softmax_k(s (q_i wq)(kv_k wk)) kv_k wv for t = 2, c = 1.
std::array<double, 2> fusion_oracle(const std::array<double, 2>& q, const std::array<double, 2>& kv, double wq, double wk,
                                    double wv, double wo, double s) {
    std::array<double, 2> out{};
    for (std::size_t i = 0; i < 2; ++i) {
        const double s0 = s * q[i] * wq * kv[0] * wk, s1 = s * q[i] * wq * kv[1] * wk;
        const double a0 = 1 / (1 + std::exp(s1 - s0));
        out[i] = q[i] + wo * wv * (a0 * kv[0] + (1 - a0) * kv[1]);
    }
    return out;
}

Outcome cross_attention() {
    Rng rng(21);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::array<double, 7> w{};
        for (double& e : w) e = rng.uniform(-1.5, 1.5);
        const std::array<double, 2> l{rng.uniform(-1, 1), rng.uniform(-1, 1)}, g{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double s = rng.uniform(0.2, 1.0);
        const CrossAttentionParams p = scalar_fusion(w);
        const Tensor lt({1, 2, 1}, {static_cast<Real>(l[0]), static_cast<Real>(l[1])});
        const Tensor gt({1, 2, 1}, {static_cast<Real>(g[0]), static_cast<Real>(g[1])});
        // Oracles use the float-rounded inputs so only the kernel's arithmetic is measured.
        const std::array<double, 2> lr{lt[0], lt[1]}, gr{gt[0], gt[1]};
        auto rounded = [](double v) { return static_cast<double>(static_cast<Real>(v)); };
        const Real sr = static_cast<Real>(s);
        const Tensor yl = fuse_local(lt, gt, p, sr), yg = fuse_global(gt, lt, p, sr);
        const auto el = fusion_oracle(lr, gr, rounded(w[0]), rounded(w[1]), rounded(w[2]), rounded(w[6]), sr);
        const auto eg = fusion_oracle(gr, lr, rounded(w[3]), rounded(w[4]), rounded(w[5]), rounded(w[6]), sr);
        for (std::int64_t i = 0; i < 2; ++i) {
            worst = std::max(worst, std::abs(yl[i] - el[static_cast<std::size_t>(i)]));
            worst = std::max(worst, std::abs(yg[i] - eg[static_cast<std::size_t>(i)]));
        }
    }

    TimeTransformerConfig cfg;
    cfg.channels = 4;
    cfg.num_heads = 2;
    cfg.head_size = 3;
    CrossAttentionParams p = init_cross_attention(rng, cfg);
    for (AttentionParams* a : {&p.to_local, &p.to_global}) {
        a->output.weight = rng.uniform_tensor(a->output.weight.shape(), -1, 1);
        a->value.weight = Tensor::zeros(a->value.weight.shape());
    }
    const Tensor l = rng.uniform_tensor({3, 7, 4}, -1, 1), g = rng.uniform_tensor({3, 7, 4}, -1, 1);
    const bool identity = same_values(fuse_local(l, g, p, cfg.fusion_scale()), l) &&
                          same_values(fuse_global(g, l, p, cfg.fusion_scale()), g);
    return {worst <= 1e-6 && identity,
            "max oracle error " + fmt(worst, 3) + " over 20 draws; zero-value identity " + (identity ? "bitwise" : "broken")};
}

// ---------------------------------------------------------------- 3

Outcome causal_convolution() {
    Rng rng(31);
    const std::int64_t t = 32, c = 2, f = 3;
    std::int64_t probes = 0, leaks = 0, dead = 0;
    for (std::int64_t dilation : {1, 4}) {
        const Conv1dParams p = init_conv1d(rng, c, f, 4, 1, dilation, true);
        const Tensor x = rng.uniform_tensor({1, t, c}, -1, 1);
        const Tensor base = conv1d_forward(x, p);
        for (std::int64_t j = 0; j < t; ++j)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                Tensor probe = x;
                probe.mutable_data()[static_cast<std::size_t>(j * c + ch)] += 1;
                const Tensor y = conv1d_forward(probe, p);
                ++probes;
                for (std::int64_t q = 0; q < j * f; ++q)
                    if (y[q] != base[q]) ++leaks;
                bool moved = false;
                for (std::int64_t q = j * f; q < (j + 1) * f; ++q) moved = moved || y[q] != base[q];
                if (!moved) ++dead;
            }
    }
    return {leaks == 0 && dead == 0, std::to_string(probes) + " probes at t=32, kernel 4, dilation 1 and 4: " +
                                         std::to_string(leaks) + " earlier outputs changed, " + std::to_string(dead) +
                                         " probes without effect on their own step"};
}

// ---------------------------------------------------------------- 4

Outcome mixture_spectrum() {
    std::string detail;
    bool ok = true;
    for (auto [weight, expected] : std::vector<std::pair<double, std::vector<std::int64_t>>>{{0.0, {5}}, {1.0, {50}}, {0.5, {5, 50}}}) {
        MixtureSpec m;
        m.n_samples = 200;
        m.local_weight = weight;
        m.seed = 41;
        auto peaks = fft_peaks(gen_local_global(m), static_cast<std::int64_t>(expected.size()));
        std::sort(peaks.begin(), peaks.end());
        ok = ok && peaks == expected;
        detail += "w=" + fmt(weight, 2) + " ->";
        for (auto b : peaks) detail += " " + std::to_string(b);
        detail += "; ";
    }
    return {ok, "top FFT bins " + detail.substr(0, detail.size() - 2)};
}

// ---------------------------------------------------------------- 5

ModelConfig model_for(std::int64_t length, std::int64_t channels) {
    ModelConfig mc;
    mc.length = length;
    mc.channels = channels;
    mc.latent_dim = ModelConfig::default_latent_dim(length);
    return mc;
}

Outcome sine_convergence() {
    SineSpec spec;
    spec.n_samples = 500;
    spec.seed = 51;
    const Tensor x = gen_sine_sim(spec);
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 64;
    tc.seed = 51;
    const auto t0 = Clock::now();
    const FitResult r = fit(x, model_for(24, 5), tc);
    const double secs = seconds_since(t0);
    bool finite = true;
    for (const auto& e : r.log.records)
        finite = finite && std::isfinite(e.recon_loss) && std::isfinite(e.disc_loss) && std::isfinite(e.gen_loss);
    const double first = r.log.records.front().recon_loss, last = r.log.records.back().recon_loss;
    return {finite && last <= 0.2 * first && secs <= 15 * 60,
            "recon " + fmt(first) + " -> " + fmt(last) + " (" + fmt(100 * last / first, 3) + "% of epoch 1), losses " +
                (finite ? "finite" : "NOT finite") + ", " + fmt(secs / 60, 3) + " min"};
}

// ---------------------------------------------------------------- 6

struct AblationScale {
    std::int64_t samples;
    std::int64_t epochs;
    std::vector<std::uint64_t> seeds;
};

struct VariantScores {
    double fid = 0;
    double disc = 0;
    double train_seconds = 0;
};

VariantScores run_variant(const Tensor& data, DecoderVariant variant, const AblationScale& scale) {
    VariantScores s;
    for (std::uint64_t seed : scale.seeds) {
        ModelConfig mc = model_for(data.dim(1), data.dim(2));
        mc.variant = variant;
        mc.init_seed = seed;
        TrainConfig tc;
        tc.epochs = scale.epochs;
        tc.batch_size = 64;
        tc.seed = seed;
        const auto t0 = Clock::now();
        const FitResult r = fit(data, mc, tc);
        s.train_seconds += seconds_since(t0);
        const Tensor synth = generate(r.bundle, data.dim(0), seed + 1);
        s.fid += fid_score(data, synth, seed);
        s.disc += discriminative_score(data, synth, seed);
    }
    const double n = static_cast<double>(scale.seeds.size());
    s.fid /= n;
    s.disc /= n;
    return s;
}

Outcome mixture_ablation() {
    const AblationScale full{2000, 200, {0, 1, 2}};
    const char* env = std::getenv("TTAE_ACCEPTANCE_FULL");
    const bool at_full = env && std::string(env) == "1";
    const AblationScale scale = at_full ? full : AblationScale{500, 20, {0, 1, 2}};

    MixtureSpec m;
    m.n_samples = scale.samples;
    m.seed = 61;
    const Tensor data = gen_local_global(m);
    const auto t0 = Clock::now();
    const VariantScores deconv = run_variant(data, DecoderVariant::DeconvOnly, scale);
    const VariantScores tt = run_variant(data, DecoderVariant::Full, scale);
    const double secs = seconds_since(t0);

    const bool better = tt.fid < deconv.fid && tt.disc < deconv.disc;
    const std::string scores = "fid full " + fmt(tt.fid, 3) + " vs deconv_only " + fmt(deconv.fid, 3) + ", disc full " +
                               fmt(tt.disc, 3) + " vs deconv_only " + fmt(deconv.disc, 3) + " (" +
                               std::to_string(scale.samples) + " samples, " + std::to_string(scale.epochs) + " epochs, " +
                               std::to_string(scale.seeds.size()) + " seeds, " + fmt(secs / 60, 3) + " min)";
    if (at_full) return {better && secs <= 90 * 60, scores};

    // Training dominates; scale the measured training time by the step ratio.
    auto steps = [](const AblationScale& s) {
        return static_cast<double>((s.samples + 63) / 64 * s.epochs * static_cast<std::int64_t>(s.seeds.size()));
    };
    const double projected = (tt.train_seconds + deconv.train_seconds) * steps(full) / steps(scale) / 60;
    return {false,
            std::string("specified scale not run: projected ") + fmt(projected, 3) +
                " min of training exceeds the 90 min budget on this host (set TTAE_ACCEPTANCE_FULL=1 to run it); "
                "reduced-scale comparison " + (better ? "holds" : "does NOT hold") + ": " + scores,
            false};
}

// ---------------------------------------------------------------- 7

Outcome metric_sanity() {
    SineSpec spec;
    spec.n_samples = 1000;
    spec.seed = 71;
    const Tensor x = gen_sine_sim(spec);
    std::vector<std::int64_t> a, b;
    for (std::int64_t i = 0; i < 1000; ++i) (i < 500 ? a : b).push_back(i);
    const double disc = discriminative_score(take_rows(x, a), take_rows(x, b), 7);

    const GaussianFit f = gaussian_fit(embed(x, make_embedder(5, 7)));
    const double self = frechet(f, f);

    Rng rng(72);
    int mismatches = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 2 + trial % 40;
        std::vector<double> s;
        std::vector<int> y;
        for (int i = 0; i < n; ++i) {
            s.push_back(std::floor(rng.uniform(0, 6)) / 5);
            y.push_back(i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng.uniform(0, 2)));
        }
        double num = 0, den = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (y[static_cast<std::size_t>(i)] == 1 && y[static_cast<std::size_t>(j)] == 0) {
                    den += 1;
                    const double si = s[static_cast<std::size_t>(i)], sj = s[static_cast<std::size_t>(j)];
                    num += si > sj ? 1.0 : si == sj ? 0.5 : 0.0;
                }
        if (auc_roc(s, y) != num / den) ++mismatches;
    }
    return {disc <= 0.1 && self <= 1e-6 && mismatches == 0,
            "disc(split A, split B) " + fmt(disc, 3) + ", frechet(f, f) " + fmt(self, 3) + ", AUC mismatches " +
                std::to_string(mismatches) + " of 500"};
}

// ---------------------------------------------------------------- 8

Outcome predictive_checks() {
    SineSpec spec;
    spec.n_samples = 500;
    spec.seed = 81;
    const Tensor x = gen_sine_sim(spec);
    const double oracle = predictive_score(x, x, PredictiveVariant::LastStep, 8);

    PosthocOptions quick;
    quick.budget.steps = 50;
    const double timegan = predictive_score(x, x, PredictiveVariant::TimeGan, 8, quick);
    spec.dims = 1;
    const Tensor one = gen_sine_sim(spec);
    const bool rejects = throws([&] { predictive_score(one, one, PredictiveVariant::TimeGan, 8, quick); });
    return {oracle <= 0.15 && std::isfinite(timegan) && rejects,
            "oracle last_step " + fmt(oracle, 3) + ", timegan on c=5 " + fmt(timegan, 3) + ", timegan on c=1 " +
                (rejects ? "rejected" : "accepted")};
}

// ---------------------------------------------------------------- 9

Outcome container_round_trips(const Scratch& dir) {
    ModelConfig mc = model_for(24, 5);
    mc.init_seed = 91;
    const ModelBundle m = ModelBundle::initialize(mc);
    save_weights(m, dir / "w.ttae");
    const ModelBundle back = load_weights(dir / "w.ttae");
    bool weights_ok = back.config == m.config;
    std::vector<Tensor> before, after;
    ModelBundle a = m, b = back;
    a.for_each_param(kAllParts, [&](const std::string&, Tensor& t) { before.push_back(t); });
    b.for_each_param(kAllParts, [&](const std::string&, Tensor& t) { after.push_back(t); });
    weights_ok = weights_ok && before.size() == after.size();
    for (std::size_t i = 0; weights_ok && i < before.size(); ++i) weights_ok = same_values(before[i], after[i]);
    save_weights(back, dir / "w2.ttae");
    weights_ok = weights_ok && slurp(dir / "w.ttae") == slurp(dir / "w2.ttae");

    SineSpec spec;
    spec.n_samples = 50;
    spec.seed = 92;
    const Tensor x = gen_sine_sim(spec);
    save_dataset(x, dir / "d.ttae");
    const bool data_ok = same_values(load_dataset(dir / "d.ttae"), x);

    int rejected = 0;
    for (const char* name : {"w.ttae", "d.ttae"}) {
        std::string bytes = slurp(dir / name);
        bytes[0] ^= 0x20;
        std::ofstream(dir / "bad.ttae", std::ios::binary) << bytes;
        const bool is_weights = std::string(name) == "w.ttae";
        if (throws([&] { is_weights ? (void)load_weights(dir / "bad.ttae") : (void)load_dataset(dir / "bad.ttae"); }))
            ++rejected;
    }
    return {weights_ok && data_ok && rejected == 2,
            std::string("weights ") + (weights_ok ? "bit-exact" : "DIFFER") + ", dataset " + (data_ok ? "bit-exact" : "DIFFERS") +
                ", corrupt headers rejected " + std::to_string(rejected) + " of 2"};
}

// ---------------------------------------------------------------- 10

int cli(const std::vector<std::string>& args, std::string* err_text = nullptr) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (err_text) *err_text = err.str();
    return code;
}

Outcome cli_reruns(const Scratch& dir) {
    const std::string root = (dir / "cli").string();
    const std::vector<std::string> model = {"--heads", "1", "--head-size", "4", "--seed-channels", "8", "--disc-hidden", "8"};
    auto with_model = [&](std::vector<std::string> a) {
        a.insert(a.end(), model.begin(), model.end());
        return a;
    };
    struct Step {
        std::string name;
        std::vector<std::string> args;
        std::vector<std::string> outputs;
    };
    const std::vector<Step> steps = {
        {"make-data", {"make-data", "sine-sim", "--n", "64", "--len", "24", "--dims", "2", "--seed", "3"}, {"data.ttae"}},
        {"train",
         with_model({"train", "--data", root + "/make-data/a/data.ttae", "--epochs", "3", "--batch", "16", "--seed", "4"}),
         {"weights.ttae", "trainlog.csv"}},
        {"generate", {"generate", "--weights", root + "/train/a/weights.ttae", "--n", "64", "--seed", "5"}, {"synth.ttae"}},
        {"eval",
         {"eval", "--real", root + "/make-data/a/data.ttae", "--synth", root + "/generate/a/synth.ttae", "--seed", "6",
          "--posthoc-steps", "30"},
         {"report.json", "pca.csv", "spectrum.csv"}},
    };
    std::string detail;
    bool ok = true;
    for (const Step& s : steps) {
        std::vector<std::string> first = s.args;
        first.insert(first.end(), {"--out", root + "/" + s.name + "/a"});
        std::string err;
        bool same = cli(first, &err) == 0 &&
                    cli({"--config", root + "/" + s.name + "/a/config.resolved", s.name, "--out", root + "/" + s.name + "/b"},
                        &err) == 0;
        for (const auto& f : s.outputs) {
            const fs::path pa = fs::path(root) / s.name / "a" / f, pb = fs::path(root) / s.name / "b" / f;
            same = same && fs::exists(pa) && slurp(pa) == slurp(pb);
        }
        ok = ok && same;
        detail += s.name + (same ? " identical" : " DIFFERS" + (err.empty() ? "" : " (" + err.substr(0, err.find('\n')) + ")")) + ", ";
    }
    return {ok, "reruns from config.resolved: " + detail.substr(0, detail.size() - 2)};
}

}  // namespace

int main() {
    Scratch dir;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradients match finite differences", gradient_checks},
        {"cross-attention oracles", cross_attention},
        {"causal convolution", causal_convolution},
        {"mixture spectra", mixture_spectrum},
        {"sine_sim training converges", sine_convergence},
        {"mixture decoder ablation", mixture_ablation},
        {"metric sanity", metric_sanity},
        {"predictive score", predictive_checks},
        {"container round trips", [&] { return container_round_trips(dir); }},
        {"cli reruns are bit-identical", [&] { return cli_reruns(dir); }},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass && o.gating) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": " << o.detail
                  << (o.pass || o.gating ? "" : " [not gating]") << std::endl;
    }
    return failures;
}
