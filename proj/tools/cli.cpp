#include "cli.hpp"

#include "ttae/aae.hpp"
#include "ttae/augmentation.hpp"
#include "ttae/datasets.hpp"
#include "ttae/evaluation.hpp"
#include "ttae/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ttae::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kVariants{"full", "deconv_only", "tcn_only", "trans_only", "sequential"};
const std::vector<std::string> kMetrics{"fid", "discriminative", "predictive"};

/// Raised for config contradictions; each entry becomes one diagnostic line.
struct UsageErrors {
    std::vector<std::string> problems;
};

void throw_if_any(const std::vector<std::string>& problems) {
    if (!problems.empty()) throw UsageErrors{problems};
}

/// Runs `f`, turning library validation failures into usage diagnostics.
template <class F>
void validated(std::vector<std::string>& problems, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        problems.emplace_back(e.what());
    }
}

// ---------------------------------------------------------------- option groups

struct ModelFlags {
    std::int64_t latent_dim = 0;  // 0 picks the default for the series length
    std::int64_t num_blocks = 2;
    std::int64_t num_heads = 3;
    std::int64_t head_size = 64;
    std::int64_t kernel_size = 4;
    std::int64_t seed_channels = 32;
    std::int64_t disc_hidden = 32;
    std::string variant = "full";
    std::string scaling = "per_head";
    bool literal_post_ln = false;
};

struct TrainFlags {
    std::int64_t epochs = 200;
    std::int64_t batch_size = 64;
    double recon_lr = 0.005;
    double recon_lr_end = 0.0001;
    double adv_lr = 0.001;
    double adv_lr_end = 0.0001;
    double lr_power = 0.5;
    std::int64_t decay_steps = 0;
    std::int64_t checkpoint_every = 50;
    bool no_adversarial = false;
};

struct PosthocFlags {
    std::int64_t steps = 500;
    std::int64_t batch_size = 64;
    double lr = 1e-3;
};

/// Double option whose recorded default keeps every digit.
CLI::Option* add_real(CLI::App* sub, const std::string& name, double& value, const std::string& desc) {
    std::ostringstream repr;
    repr << std::setprecision(17) << value;
    return sub->add_option(name, value, desc)->default_str(repr.str());
}

void add_seed(CLI::App* sub, std::uint64_t& seed, bool required = false) {
    auto* opt = sub->add_option("--seed", seed, "Random seed (default from TTAE_SEED)")->envname("TTAE_SEED");
    if (required) opt->required();
}

void add_model_flags(CLI::App* sub, ModelFlags& m, bool with_variant = true) {
    sub->add_option("--latent-dim", m.latent_dim, "Latent width; 0 picks 8 up to 24 steps, 16 beyond");
    sub->add_option("--num-blocks", m.num_blocks, "Time-Transformer blocks");
    sub->add_option("--heads", m.num_heads, "Attention heads");
    sub->add_option("--head-size", m.head_size, "Width of each attention head");
    sub->add_option("--kernel", m.kernel_size, "TCN kernel size");
    sub->add_option("--seed-channels", m.seed_channels, "Channels of the decoder seed sequence");
    sub->add_option("--disc-hidden", m.disc_hidden, "Hidden width of the latent discriminator");
    if (with_variant) {
        sub->add_option("--variant", m.variant, "Decoder refinement")->check(CLI::IsMember(kVariants));
    }
    sub->add_option("--scaling", m.scaling, "Attention score scale")->check(CLI::IsMember({"per_head", "channels"}));
    sub->add_flag("--literal-post-ln", m.literal_post_ln, "Use y = LN(f(x)) without the sublayer skip path");
}

void add_train_flags(CLI::App* sub, TrainFlags& t) {
    sub->add_option("--epochs", t.epochs, "Training epochs");
    sub->add_option("--batch", t.batch_size, "Minibatch size");
    add_real(sub, "--recon-lr", t.recon_lr, "Initial reconstruction learning rate");
    add_real(sub, "--recon-lr-end", t.recon_lr_end, "Final reconstruction learning rate");
    add_real(sub, "--adv-lr", t.adv_lr, "Initial adversarial learning rate");
    add_real(sub, "--adv-lr-end", t.adv_lr_end, "Final adversarial learning rate");
    add_real(sub, "--lr-power", t.lr_power, "Polynomial decay power");
    sub->add_option("--decay-steps", t.decay_steps, "Decay horizon in optimizer steps; 0 spans the run");
    sub->add_option("--checkpoint-every", t.checkpoint_every, "Epochs between checkpoints; 0 disables");
    sub->add_flag("--no-adversarial", t.no_adversarial, "Skip the discriminator and generator phases");
}

void add_posthoc_flags(CLI::App* sub, PosthocFlags& p) {
    sub->add_option("--posthoc-steps", p.steps, "Optimizer steps of the post-hoc models");
    sub->add_option("--posthoc-batch", p.batch_size, "Minibatch size of the post-hoc models");
    add_real(sub, "--posthoc-lr", p.lr, "Learning rate of the post-hoc models");
}

ModelConfig model_config(const ModelFlags& m, std::int64_t length, std::int64_t channels, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.length = length;
    cfg.channels = channels;
    cfg.latent_dim = m.latent_dim > 0 ? m.latent_dim : ModelConfig::default_latent_dim(length);
    cfg.num_blocks = m.num_blocks;
    cfg.num_heads = m.num_heads;
    cfg.head_size = m.head_size;
    cfg.kernel_size = m.kernel_size;
    cfg.seed_channels = m.seed_channels;
    cfg.disc_hidden = m.disc_hidden;
    cfg.variant = parse_decoder_variant(m.variant);
    cfg.scaling = m.scaling == "channels" ? AttentionScaling::Channels : AttentionScaling::PerHead;
    cfg.sublayer_residual = !m.literal_post_ln;
    cfg.init_seed = seed;
    return cfg;
}

TrainConfig train_config(const TrainFlags& t, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch_size;
    cfg.recon_lr = {t.recon_lr, t.recon_lr_end, t.lr_power, t.decay_steps};
    cfg.adv_lr = {t.adv_lr, t.adv_lr_end, t.lr_power, t.decay_steps};
    cfg.seed = seed;
    cfg.checkpoint_every = t.checkpoint_every;
    cfg.adversarial = !t.no_adversarial;
    return cfg;
}

PosthocOptions posthoc_options(const PosthocFlags& p) {
    PosthocOptions opts;
    opts.budget.steps = p.steps;
    opts.budget.batch_size = p.batch_size;
    opts.budget.lr = p.lr;
    return opts;
}

std::vector<std::string> posthoc_problems(const PosthocFlags& p) {
    std::vector<std::string> problems;
    if (p.steps < 1) problems.push_back("--posthoc-steps must be at least 1");
    if (p.batch_size < 1) problems.push_back("--posthoc-batch must be at least 1");
    if (!(p.lr > 0)) problems.push_back("--posthoc-lr must be positive");
    return problems;
}

// ---------------------------------------------------------------- shared steps

/// Writes the subcommand's options, defaults included, as a [name] section.
void write_resolved(const CLI::App& app, const CLI::App& sub, const fs::path& dir) {
    const std::string prefix = sub.get_name() + ".";
    std::istringstream all(app.config_to_str(true, false));
    std::ofstream f(dir / "config.resolved");
    f << '[' << sub.get_name() << "]\n";
    for (std::string line; std::getline(all, line);) {
        if (line.rfind(prefix, 0) != 0) continue;
        // An empty list prints as "{}", which does not parse back; leaving it out keeps the empty default.
        if (line.ends_with("=\"{}\"")) continue;
        f << line.substr(prefix.size()) << '\n';
    }
    if (!f) throw Error("cannot write " + (dir / "config.resolved").string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw Error("cannot write " + path.string());
}

FitResult train_into(const Tensor& data, const ModelConfig& model, TrainConfig cfg, const fs::path& dir,
                     const std::string& tag, std::ostream& err) {
    fs::create_directories(dir);
    cfg.checkpoint_dir = dir / "checkpoints";
    const std::int64_t epochs = cfg.epochs;
    FitResult fit_result = fit(data, model, cfg, [&](const EpochRecord& r) {
        err << tag << "epoch " << r.epoch << '/' << epochs << " recon " << r.recon_loss << " disc " << r.disc_loss
            << " gen " << r.gen_loss << " (" << std::fixed << std::setprecision(2) << r.seconds << " s)\n"
            << std::defaultfloat << std::setprecision(6);
    });
    save_weights(fit_result.bundle, dir / "weights.ttae");
    fit_result.log.write_csv(dir / "trainlog.csv");
    return fit_result;
}

/// report.json, pca.csv (real fit, both projected) and spectrum.csv.
EvalReport evaluate_into(const Tensor& real, const Tensor& synth, const EvalOptions& opts, const fs::path& dir) {
    const EvalReport report = evaluate(real, synth, opts);
    write_text(dir / "report.json", report.to_json().dump(2) + "\n");

    const PcaResult pca = pca_project_2d(real);
    const Eigen::MatrixXd synth_coords = pca_transform(pca, synth);
    std::ostringstream p;
    p << std::setprecision(17) << "source,index,pc1,pc2\n";
    for (Eigen::Index i = 0; i < pca.coords.rows(); ++i) {
        p << "real," << i << ',' << pca.coords(i, 0) << ',' << pca.coords(i, 1) << '\n';
    }
    for (Eigen::Index i = 0; i < synth_coords.rows(); ++i) {
        p << "synth," << i << ',' << synth_coords(i, 0) << ',' << synth_coords(i, 1) << '\n';
    }
    write_text(dir / "pca.csv", p.str());

    const auto real_spec = mean_spectrum(real);
    const auto synth_spec = mean_spectrum(synth);
    std::ostringstream s;
    s << std::setprecision(17) << "bin,real,synth\n";
    for (std::size_t b = 0; b < real_spec.size(); ++b) {
        s << b << ',' << real_spec[b] << ',' << (b < synth_spec.size() ? synth_spec[b] : 0.0) << '\n';
    }
    write_text(dir / "spectrum.csv", s.str());
    return report;
}

EvalOptions eval_options(const std::vector<std::string>& metrics, const std::string& predictive_variant,
                         std::uint64_t seed, const PosthocFlags& posthoc) {
    EvalOptions opts;
    auto has = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };
    opts.fid = has("fid");
    opts.discriminative = has("discriminative");
    opts.predictive = has("predictive");
    if (predictive_variant == "both") {
        opts.predictive_variants = {PredictiveVariant::LastStep, PredictiveVariant::TimeGan};
    } else {
        opts.predictive_variants = {parse_predictive_variant(predictive_variant)};
    }
    opts.seeds = {seed, seed + 1, seed + 2};
    opts.posthoc = posthoc_options(posthoc);
    return opts;
}

// ---------------------------------------------------------------- make-data

struct MakeDataOpts {
    std::string kind = "sine-sim";
    std::string out = "data";
    std::int64_t n = 5000;
    std::int64_t length = 24;
    std::int64_t dims = 5;
    double amplitude_lo = 1.0, amplitude_hi = 3.0;
    double frequency_lo = 0.1, frequency_hi = 0.15;
    double phase_lo = 0.0, phase_hi = 2 * std::numbers::pi;
    double local_weight = 0.5;
    double local_frequency = 50.0;
    double global_frequency = 5.0;
    double sample_rate = 128.0;
    std::uint64_t seed = 0;
    bool normalize = true;
    std::string csv;
    bool csv_header = false;
    std::string csv_delimiter = ",";
    std::vector<std::int64_t> csv_columns;
};

void setup_make_data(CLI::App* sub, MakeDataOpts& o) {
    sub->add_option("kind,--kind", o.kind, "Dataset family")
        ->check(CLI::IsMember({"sine-sim", "sine-cpx", "mixture", "csv"}));
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--n", o.n, "Number of series (generators)");
    sub->add_option("--len", o.length, "Series length; window length for csv");
    sub->add_option("--dims", o.dims, "Channels (sine families)");
    add_real(sub, "--amp-lo", o.amplitude_lo, "Lower amplitude bound");
    add_real(sub, "--amp-hi", o.amplitude_hi, "Upper amplitude bound");
    add_real(sub, "--freq-lo", o.frequency_lo, "Lower frequency bound, cycles per step (sine families)");
    add_real(sub, "--freq-hi", o.frequency_hi, "Upper frequency bound, cycles per step (sine families)");
    add_real(sub, "--phase-lo", o.phase_lo, "Lower phase bound (sine families)");
    add_real(sub, "--phase-hi", o.phase_hi, "Upper phase bound (sine families)");
    add_real(sub, "--local-weight", o.local_weight, "Weight of the local tone (mixture)");
    add_real(sub, "--local-freq", o.local_frequency, "Local tone in Hz (mixture)");
    add_real(sub, "--global-freq", o.global_frequency, "Global tone in Hz (mixture)");
    add_real(sub, "--sample-rate", o.sample_rate, "Samples per second (mixture)");
    add_seed(sub, o.seed);
    sub->add_option("--normalize", o.normalize, "Min-max scale each channel to [0, 1] (true or false)");
    sub->add_option("--csv", o.csv, "Input CSV file (csv)");
    sub->add_flag("--csv-header", o.csv_header, "Skip the first CSV row");
    sub->add_option("--csv-delimiter", o.csv_delimiter, "CSV field separator");
    sub->add_option("--csv-columns", o.csv_columns, "Zero-based CSV columns to keep")->delimiter(',');
}

int run_make_data(const CLI::App& app, const CLI::App& sub, const MakeDataOpts& o, std::ostream& out) {
    std::vector<std::string> problems;
    SineSpec sine;
    sine.n_samples = o.n;
    sine.length = o.length;
    sine.dims = o.dims;
    sine.amplitude_lo = o.amplitude_lo;
    sine.amplitude_hi = o.amplitude_hi;
    sine.frequency_lo = o.frequency_lo;
    sine.frequency_hi = o.frequency_hi;
    sine.phase_lo = o.phase_lo;
    sine.phase_hi = o.phase_hi;
    sine.components = o.kind == "sine-cpx" ? 3 : 1;
    sine.seed = o.seed;
    sine.normalize = o.normalize;

    MixtureSpec mix;
    mix.n_samples = o.n;
    mix.length = o.length;
    mix.local_weight = o.local_weight;
    mix.local_frequency = o.local_frequency;
    mix.global_frequency = o.global_frequency;
    mix.sample_rate = o.sample_rate;
    mix.amplitude_lo = o.amplitude_lo;
    mix.amplitude_hi = o.amplitude_hi;
    mix.seed = o.seed;
    mix.normalize = o.normalize;

    if (o.kind == "csv") {
        if (o.csv.empty()) problems.push_back("make-data csv requires --csv");
        if (o.csv_delimiter.size() != 1) problems.push_back("--csv-delimiter must be a single character");
        if (o.length < 1) problems.push_back("--len must be at least 1");
    } else {
        if (!o.csv.empty()) problems.push_back("--csv only applies to make-data csv");
        if (o.kind == "mixture") {
            validated(problems, [&] { mix.validate(); });
        } else {
            validated(problems, [&] { sine.validate(); });
        }
    }
    throw_if_any(problems);

    Tensor data;
    if (o.kind == "sine-sim") {
        data = gen_sine_sim(sine);
    } else if (o.kind == "sine-cpx") {
        data = gen_sine_cpx(sine);
    } else if (o.kind == "mixture") {
        data = gen_local_global(mix);
    } else {
        CsvSchema schema;
        schema.header = o.csv_header;
        schema.delimiter = o.csv_delimiter[0];
        schema.columns = o.csv_columns;
        Tensor series = load_csv(o.csv, schema);
        if (o.normalize) series = minmax_normalize(series);
        data = sliding_windows(series, o.length);
    }

    const fs::path dir = o.out;
    fs::create_directories(dir);
    save_dataset(data, dir / "data.ttae");
    write_resolved(app, sub, dir);
    out << "wrote " << (dir / "data.ttae").string() << ' ' << to_string(data.shape()) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    std::string data;
    std::string out = "run";
    std::uint64_t seed = 0;
    ModelFlags model;
    TrainFlags train;
};

void setup_train(CLI::App* sub, TrainOpts& o) {
    sub->add_option("--data", o.data, "Training container")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory");
    add_seed(sub, o.seed);
    add_model_flags(sub, o.model);
    add_train_flags(sub, o.train);
}

int run_train(const CLI::App& app, const CLI::App& sub, const TrainOpts& o, std::ostream& out, std::ostream& err) {
    const Tensor data = load_dataset(o.data);
    const ModelConfig model = model_config(o.model, data.dim(1), data.dim(2), o.seed);
    const TrainConfig cfg = train_config(o.train, o.seed);
    std::vector<std::string> problems;
    validated(problems, [&] { model.validate(); });
    validated(problems, [&] { cfg.validate(); });
    throw_if_any(problems);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_resolved(app, sub, dir);
    const FitResult r = train_into(data, model, cfg, dir, "", err);
    out << "wrote " << (dir / "weights.ttae").string() << " (" << r.bundle.parameter_count() << " parameters)\n";
    return kExitOk;
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
    std::string weights;
    std::string out = "synth";
    std::int64_t n = 1000;
    std::uint64_t seed = 0;
};

void setup_generate(CLI::App* sub, GenerateOpts& o) {
    sub->add_option("--weights", o.weights, "Trained weights file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--n", o.n, "Number of series");
    add_seed(sub, o.seed, true);
}

int run_generate(const CLI::App& app, const CLI::App& sub, const GenerateOpts& o, std::ostream& out) {
    if (o.n < 1) throw UsageErrors{{"--n must be at least 1"}};
    const ModelBundle bundle = load_weights(o.weights);
    const Tensor synth = generate(bundle, o.n, o.seed);
    const fs::path dir = o.out;
    fs::create_directories(dir);
    save_dataset(synth, dir / "synth.ttae");
    write_resolved(app, sub, dir);
    out << "wrote " << (dir / "synth.ttae").string() << ' ' << to_string(synth.shape()) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
    std::string real;
    std::string synth;
    std::string out = "eval";
    std::vector<std::string> metrics = kMetrics;
    std::string predictive_variant = "both";
    std::uint64_t seed = 0;
    PosthocFlags posthoc;
};

void setup_eval(CLI::App* sub, EvalOpts& o) {
    sub->add_option("--real", o.real, "Real container")->required()->check(CLI::ExistingFile);
    sub->add_option("--synth", o.synth, "Synthetic container")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--metrics", o.metrics, "Metrics to compute")->delimiter(',')->check(CLI::IsMember(kMetrics));
    sub->add_option("--predictive-variant", o.predictive_variant, "Predictive score protocol")
        ->check(CLI::IsMember({"last_step", "timegan", "both"}));
    add_seed(sub, o.seed);
    add_posthoc_flags(sub, o.posthoc);
}

int run_eval(const CLI::App& app, const CLI::App& sub, const EvalOpts& o, std::ostream& out) {
    throw_if_any(posthoc_problems(o.posthoc));
    const Tensor real = load_dataset(o.real);
    const Tensor synth = load_dataset(o.synth);
    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_resolved(app, sub, dir);
    const EvalReport report = evaluate_into(real, synth, eval_options(o.metrics, o.predictive_variant, o.seed, o.posthoc), dir);
    out << report.to_json().dump() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblateOpts {
    std::string data;
    std::string out = "ablation";
    std::vector<std::string> variants = kVariants;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::int64_t n_synth = 0;
    std::vector<std::string> metrics{"fid", "discriminative"};
    std::string predictive_variant = "last_step";
    std::uint64_t eval_seed = 0;
    ModelFlags model;
    TrainFlags train;
    PosthocFlags posthoc;
};

void setup_ablate(CLI::App* sub, AblateOpts& o) {
    sub->add_option("--data", o.data, "Training container, also the real side of evaluation")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--variants", o.variants, "Decoder variants to compare")->delimiter(',')->check(CLI::IsMember(kVariants));
    sub->add_option("--seeds", o.seeds, "Training seeds, one run each")->delimiter(',');
    sub->add_option("--n-synth", o.n_synth, "Generated series per run; 0 matches the data");
    sub->add_option("--metrics", o.metrics, "Metrics to compute")->delimiter(',')->check(CLI::IsMember(kMetrics));
    sub->add_option("--predictive-variant", o.predictive_variant, "Predictive score protocol")
        ->check(CLI::IsMember({"last_step", "timegan", "both"}));
    sub->add_option("--eval-seed", o.eval_seed, "Seed of the embedder and post-hoc models")->envname("TTAE_SEED");
    add_model_flags(sub, o.model, false);
    add_train_flags(sub, o.train);
    add_posthoc_flags(sub, o.posthoc);
}

struct Summary {
    double mean = 0;
    double std = 0;
};

Summary summarize(const std::vector<double>& v) {
    Summary s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        for (double x : v) s.std += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(s.std / static_cast<double>(v.size() - 1));
    }
    return s;
}

int run_ablate(const CLI::App& app, const CLI::App& sub, const AblateOpts& o, std::ostream& out, std::ostream& err) {
    std::vector<std::string> problems = posthoc_problems(o.posthoc);
    if (o.seeds.empty()) problems.push_back("--seeds must list at least one seed");
    if (o.variants.empty()) problems.push_back("--variants must list at least one variant");
    if (o.n_synth < 0) problems.push_back("--n-synth must not be negative");
    const Tensor data = load_dataset(o.data);
    for (const auto& v : o.variants) {
        ModelFlags m = o.model;
        m.variant = v;
        validated(problems, [&] { model_config(m, data.dim(1), data.dim(2), 0).validate(); });
    }
    validated(problems, [&] { train_config(o.train, 0).validate(); });
    throw_if_any(problems);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_resolved(app, sub, dir);
    const std::int64_t n_synth = o.n_synth > 0 ? o.n_synth : data.dim(0);
    const EvalOptions eval_opts = eval_options(o.metrics, o.predictive_variant, o.eval_seed, o.posthoc);

    // metric name -> values per variant, in run order
    std::map<std::string, std::map<std::string, std::vector<double>>> results;
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& v : o.variants) {
        ModelFlags m = o.model;
        m.variant = v;
        for (std::uint64_t seed : o.seeds) {
            const fs::path run_dir = dir / v / ("seed" + std::to_string(seed));
            const std::string tag = v + " seed " + std::to_string(seed) + ": ";
            const FitResult r = train_into(data, model_config(m, data.dim(1), data.dim(2), seed), train_config(o.train, seed),
                                           run_dir, tag, err);
            const Tensor synth = generate(r.bundle, n_synth, seed + 1);
            const EvalReport report = evaluate_into(data, synth, eval_opts, run_dir);
            if (report.fid) results[v]["fid"].push_back(*report.fid);
            if (report.discriminative) results[v]["discriminative"].push_back(*report.discriminative);
            if (report.predictive_last_step) results[v]["predictive_last_step"].push_back(*report.predictive_last_step);
            if (report.predictive_timegan) results[v]["predictive_timegan"].push_back(*report.predictive_timegan);
            nlohmann::json entry = report.to_json();
            entry["variant"] = v;
            entry["train_seed"] = seed;
            runs.push_back(entry);
            err << tag << report.to_json().dump() << '\n';
        }
    }

    const std::vector<std::string> columns{"fid", "discriminative", "predictive_last_step", "predictive_timegan"};
    std::ostringstream table;
    table << std::setprecision(17) << "variant,runs";
    for (const auto& c : columns) table << ',' << c << "_mean," << c << "_std";
    table << '\n';
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& v : o.variants) {
        table << v << ',' << o.seeds.size();
        for (const auto& c : columns) {
            const auto it = results[v].find(c);
            if (it == results[v].end()) {
                table << ",,";
                continue;
            }
            const Summary s = summarize(it->second);
            table << ',' << s.mean << ',' << s.std;
            summary[v][c] = {{"mean", s.mean}, {"std", s.std}, {"values", it->second}};
        }
        table << '\n';
    }
    write_text(dir / "ablation.csv", table.str());
    write_text(dir / "report.json", nlohmann::json{{"summary", summary}, {"runs", runs}}.dump(2) + "\n");
    out << table.str();
    return kExitOk;
}

// ---------------------------------------------------------------- augment

struct AugmentOpts {
    std::string train;
    std::string train_labels;
    std::string test;
    std::string test_labels;
    std::string out = "augment";
    std::string mode = "balance_minority";
    std::int64_t amount = 100;
    std::vector<std::string> methods{"none", "replicate", "jitter", "model"};
    double jitter_sigma = 0.03;
    std::uint64_t seed = 0;
    std::int64_t classifier_steps = 1000;
    std::int64_t classifier_hidden = 128;
    ModelFlags model;
    TrainFlags train_flags;
};

void setup_augment(CLI::App* sub, AugmentOpts& o) {
    sub->add_option("--train", o.train, "Train container")->required()->check(CLI::ExistingFile);
    sub->add_option("--train-labels", o.train_labels, "Train labels, one per line")->required()->check(CLI::ExistingFile);
    sub->add_option("--test", o.test, "Test container")->required()->check(CLI::ExistingFile);
    sub->add_option("--test-labels", o.test_labels, "Test labels, one per line")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--mode", o.mode, "What to add")->check(CLI::IsMember({"balance_minority", "grow_percent"}));
    sub->add_option("--amount", o.amount, "Percent growth for grow_percent")->check(CLI::IsMember({25, 50, 75, 100}));
    sub->add_option("--methods", o.methods, "Augmentations to compare; none is the unaugmented baseline")
        ->delimiter(',')
        ->check(CLI::IsMember({"none", "replicate", "jitter", "model"}));
    add_real(sub, "--jitter-sigma", o.jitter_sigma, "Noise level of the jitter baseline");
    add_seed(sub, o.seed);
    sub->add_option("--classifier-steps", o.classifier_steps, "Optimizer steps of the downstream classifier");
    sub->add_option("--classifier-hidden", o.classifier_hidden, "Hidden width of the downstream classifier");
    add_model_flags(sub, o.model);
    add_train_flags(sub, o.train_flags);
}

nlohmann::json label_counts(const LabeledDataset& d) {
    nlohmann::json j = nlohmann::json::object();
    for (int label : {0, 1}) j[std::to_string(label)] = d.count(label);
    return j;
}

int run_augment(const CLI::App& app, const CLI::App& sub, const AugmentOpts& o, std::ostream& out, std::ostream& err) {
    LabeledDataset train{load_dataset(o.train), load_labels(o.train_labels), "train"};
    LabeledDataset test{load_dataset(o.test), load_labels(o.test_labels), "test"};
    AugmentPlan plan{parse_augment_mode(o.mode), o.amount};
    ClassifierOptions copts;
    copts.budget.steps = o.classifier_steps;
    copts.hidden = o.classifier_hidden;

    std::vector<std::string> problems;
    validated(problems, [&] { train.validate(); });
    validated(problems, [&] { test.validate(); });
    if (train.batch.rank() == 3 && test.batch.rank() == 3 &&
        (train.batch.dim(1) != test.batch.dim(1) || train.batch.dim(2) != test.batch.dim(2))) {
        problems.push_back("train " + to_string(train.batch.shape()) + " and test " + to_string(test.batch.shape()) +
                           " series differ in shape");
    }
    if (o.methods.empty()) problems.push_back("--methods must list at least one method");
    if (!(o.jitter_sigma >= 0)) problems.push_back("--jitter-sigma must not be negative");
    if (o.classifier_steps < 1) problems.push_back("--classifier-steps must be at least 1");
    if (o.classifier_hidden < 1) problems.push_back("--classifier-hidden must be at least 1");
    validated(problems, [&] { model_config(o.model, train.batch.dim(1), train.batch.dim(2), 0).validate(); });
    validated(problems, [&] { train_config(o.train_flags, 0).validate(); });
    throw_if_any(problems);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_resolved(app, sub, dir);
    const auto extra = augment_counts(train, plan);

    nlohmann::json metrics = nlohmann::json::object();
    nlohmann::json sizes = nlohmann::json::object();
    for (const auto& method : o.methods) {
        LabeledDataset augmented = train;
        if (method == "replicate" || method == "jitter") {
            augmented = augment_with_baseline(train, parse_augment_method(method), plan, o.seed, o.jitter_sigma);
        } else if (method == "model") {
            std::map<int, ModelBundle> generators;
            for (const auto& [label, n] : extra) {
                if (n == 0) continue;
                const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(label);
                const ModelConfig model = model_config(o.model, train.batch.dim(1), train.batch.dim(2), seed);
                const fs::path gen_dir = dir / "generators" / ("label" + std::to_string(label));
                const std::string tag = "label " + std::to_string(label) + ": ";
                generators.emplace(label, train_into(train.samples_with(label), model, train_config(o.train_flags, seed),
                                                     gen_dir, tag, err)
                                              .bundle);
            }
            augmented = augment_with_model(train, generators, plan, o.seed);
        }
        const ClassifierMetrics m = classify_and_report(augmented, test, o.seed, copts);
        metrics[method] = m.to_json();
        sizes[method] = label_counts(augmented);
        err << method << ": " << m.to_json().dump() << '\n';
    }

    nlohmann::json extra_json = nlohmann::json::object();
    for (const auto& [label, n] : extra) extra_json[std::to_string(label)] = n;
    const nlohmann::json report{{"mode", o.mode},
                                {"amount", o.amount},
                                {"train_counts", label_counts(train)},
                                {"added", extra_json},
                                {"augmented_counts", sizes},
                                {"metrics", metrics}};
    write_text(dir / "metrics.json", report.dump(2) + "\n");
    out << metrics.dump() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Time-Transformer AAE: data, training, generation, evaluation and augmentation", "ttae"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "Read options from a key=value file with [subcommand] sections");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    MakeDataOpts make_data;
    TrainOpts train;
    GenerateOpts gen;
    EvalOpts eval;
    AblateOpts ablate;
    AugmentOpts augment;

    auto* make_data_cmd = app.add_subcommand("make-data", "Write a dataset container");
    auto* train_cmd = app.add_subcommand("train", "Fit a model on a container");
    auto* gen_cmd = app.add_subcommand("generate", "Sample series from trained weights");
    auto* eval_cmd = app.add_subcommand("eval", "Score synthetic against real series");
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate each decoder variant");
    auto* augment_cmd = app.add_subcommand("augment", "Compare augmentations on a downstream classifier");
    for (auto* sub : {make_data_cmd, train_cmd, gen_cmd, eval_cmd, ablate_cmd, augment_cmd}) sub->fallthrough();
    setup_make_data(make_data_cmd, make_data);
    setup_train(train_cmd, train);
    setup_generate(gen_cmd, gen);
    setup_eval(eval_cmd, eval);
    setup_ablate(ablate_cmd, ablate);
    setup_augment(augment_cmd, augment);

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::ParseError& e) {
        if (app.exit(e, out, err) == 0) return kExitOk;
        if (app.get_subcommands().empty()) err << app.help();
        return kExitUsage;
    }

    try {
        if (make_data_cmd->parsed()) return run_make_data(app, *make_data_cmd, make_data, out);
        if (train_cmd->parsed()) return run_train(app, *train_cmd, train, out, err);
        if (gen_cmd->parsed()) return run_generate(app, *gen_cmd, gen, out);
        if (eval_cmd->parsed()) return run_eval(app, *eval_cmd, eval, out);
        if (ablate_cmd->parsed()) return run_ablate(app, *ablate_cmd, ablate, out, err);
        return run_augment(app, *augment_cmd, augment, out, err);
    } catch (const UsageErrors& u) {
        for (const auto& p : u.problems) err << "error: " << p << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace ttae::cli
