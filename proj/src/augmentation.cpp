#include "ttae/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace ttae {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw Error(message);
}

LabeledDataset append(const LabeledDataset& base, const Tensor& extra, int label) {
    if (extra.dim(0) == 0) return base;
    LabeledDataset out = base;
    out.batch = concat({base.batch, extra}, 0);
    out.labels.insert(out.labels.end(), static_cast<std::size_t>(extra.dim(0)), label);
    return out;
}

}  // namespace

// ---------------------------------------------------------------- labeled data

void LabeledDataset::validate() const {
    require(batch.rank() == 3, "labeled dataset: expected an [n, t, c] batch, got " + to_string(batch.shape()));
    require(batch.dim(0) == size(), "labeled dataset: " + std::to_string(size()) + " labels for " +
                                        std::to_string(batch.dim(0)) + " samples");
    for (int l : labels) require(l == 0 || l == 1, "labeled dataset: labels must be 0 or 1, got " + std::to_string(l));
}

std::int64_t LabeledDataset::count(int label) const {
    return static_cast<std::int64_t>(std::count(labels.begin(), labels.end(), label));
}

Tensor LabeledDataset::samples_with(int label) const {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) idx.push_back(static_cast<std::int64_t>(i));
    return take_rows(batch, idx);
}

std::vector<int> load_labels(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("load_labels: cannot open '" + path.string() + "'");
    std::vector<int> out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(line, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != line.size()) {
            throw Error("load_labels: " + path.string() + ":" + std::to_string(line_no) + ": not an integer: '" + line + "'");
        }
        out.push_back(v);
    }
    return out;
}

void save_labels(const std::vector<int>& labels, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("save_labels: cannot open '" + path.string() + "' for writing");
    for (int l : labels) os << l << '\n';
}

// ---------------------------------------------------------------- baselines

Tensor jitter(const Tensor& batch, double sigma, std::uint64_t seed) {
    require(sigma >= 0, "jitter: sigma must be >= 0");
    Rng rng(seed);
    std::vector<Real> out = batch.to_vector();
    if (sigma == 0) return batch;
    for (auto& v : out) v = std::clamp(static_cast<Real>(v + rng.normal(0.0, sigma)), Real(0), Real(1));
    return Tensor(batch.shape(), std::move(out));
}

Tensor replicate(const Tensor& samples, std::int64_t target_count) {
    require(samples.rank() >= 1 && samples.dim(0) > 0, "replicate: no samples to repeat");
    const std::int64_t n = samples.dim(0);
    require(target_count >= n, "replicate: target " + std::to_string(target_count) + " is below the current count " +
                                   std::to_string(n));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(target_count));
    for (std::int64_t i = 0; i < target_count; ++i) idx[static_cast<std::size_t>(i)] = i % n;
    return take_rows(samples, idx);
}

// ---------------------------------------------------------------- augmentation

std::string to_string(AugmentMode m) { return m == AugmentMode::BalanceMinority ? "balance_minority" : "grow_percent"; }

std::string to_string(AugmentMethod m) {
    switch (m) {
        case AugmentMethod::Model: return "model";
        case AugmentMethod::Replicate: return "replicate";
        case AugmentMethod::Jitter: return "jitter";
    }
    return "model";
}

AugmentMode parse_augment_mode(const std::string& name) {
    if (name == "balance_minority") return AugmentMode::BalanceMinority;
    if (name == "grow_percent") return AugmentMode::GrowPercent;
    throw Error("unknown augment mode '" + name + "' (expected balance_minority or grow_percent)");
}

AugmentMethod parse_augment_method(const std::string& name) {
    for (auto m : {AugmentMethod::Model, AugmentMethod::Replicate, AugmentMethod::Jitter})
        if (to_string(m) == name) return m;
    throw Error("unknown augment method '" + name + "' (expected model, replicate or jitter)");
}

std::map<int, std::int64_t> augment_counts(const LabeledDataset& train, const AugmentPlan& plan) {
    train.validate();
    require(train.split == "train", "augment: only the train split may be augmented, got '" + train.split + "'");
    std::map<int, std::int64_t> counts;
    for (int l : train.labels) ++counts[l];
    std::map<int, std::int64_t> extra;
    if (plan.mode == AugmentMode::BalanceMinority) {
        require(counts.size() == 2, "augment: balancing needs both classes in the train split");
        const auto [minority, majority] = counts[0] <= counts[1] ? std::pair{0, 1} : std::pair{1, 0};
        extra[minority] = counts[majority] - counts[minority];
        extra[majority] = 0;
        return extra;
    }
    require(plan.amount == 25 || plan.amount == 50 || plan.amount == 75 || plan.amount == 100,
            "augment: grow_percent amount must be 25, 50, 75 or 100, got " + std::to_string(plan.amount));
    require(train.size() > 0, "augment: empty train split");
    // Class-proportional split of the total by largest remainder.
    const std::int64_t total = train.size() * plan.amount / 100;
    std::int64_t assigned = 0;
    std::vector<std::pair<std::int64_t, int>> remainders;
    for (const auto& [label, n] : counts) {
        const std::int64_t share = total * n / train.size();
        extra[label] = share;
        assigned += share;
        remainders.push_back({(total * n) % train.size(), label});
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++extra[remainders[i % remainders.size()].second];
    return extra;
}

LabeledDataset augment_with_model(const LabeledDataset& train, const std::map<int, ModelBundle>& generators,
                                  const AugmentPlan& plan, std::uint64_t seed) {
    const auto extra = augment_counts(train, plan);
    Rng rng(seed);
    LabeledDataset out = train;
    for (const auto& [label, n] : extra) {
        const std::uint64_t label_seed = rng.next();
        if (n == 0) continue;
        const auto it = generators.find(label);
        require(it != generators.end(), "augment: no generator for label " + std::to_string(label));
        const ModelBundle& g = it->second;
        require(g.config.trained_steps > 0, "augment: generator for label " + std::to_string(label) + " is untrained");
        require(g.config.length == train.batch.dim(1) && g.config.channels == train.batch.dim(2),
                "augment: generator for label " + std::to_string(label) + " produces [" + std::to_string(g.config.length) +
                    ", " + std::to_string(g.config.channels) + "] series, data has " + to_string(train.batch.shape()));
        out = append(out, generate(g, n, label_seed), label);
    }
    return out;
}

LabeledDataset augment_with_baseline(const LabeledDataset& train, AugmentMethod method, const AugmentPlan& plan,
                                     std::uint64_t seed, double jitter_sigma) {
    require(method != AugmentMethod::Model, "augment_with_baseline: use augment_with_model for generated samples");
    const auto extra = augment_counts(train, plan);
    Rng rng(seed);
    LabeledDataset out = train;
    for (const auto& [label, n] : extra) {
        const std::uint64_t label_seed = rng.next();
        if (n == 0) continue;
        const Tensor source = train.samples_with(label);
        Tensor added = slice(replicate(source, source.dim(0) + n), 0, source.dim(0), n);
        if (method == AugmentMethod::Jitter) added = jitter(added, jitter_sigma, label_seed);
        out = append(out, added, label);
    }
    return out;
}

// ---------------------------------------------------------------- metrics

namespace {

void check_scored(const char* op, std::span<const double> scores, std::span<const int> labels, std::int64_t& pos,
                  std::int64_t& neg) {
    require(scores.size() == labels.size(), std::string(op) + ": scores and labels differ in length");
    pos = neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] == 0 || labels[i] == 1, std::string(op) + ": labels must be 0 or 1");
        require(std::isfinite(scores[i]), std::string(op) + ": non-finite score");
        (labels[i] == 1 ? pos : neg) += 1;
    }
    require(pos > 0 && neg > 0, std::string(op) + ": both classes must be present");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return descending ? scores[a] > scores[b] : scores[a] < scores[b]; });
    return idx;
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    std::int64_t pos = 0, neg = 0;
    check_scored("auc_roc", scores, labels, pos, neg);
    const auto idx = order_by_score(scores, false);
    // Twice the number of (positive, negative) pairs ranked correctly, ties counting once.
    std::int64_t twice_wins = 0, neg_below = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::int64_t p = 0, n = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (labels[idx[j++]] == 1 ? p : n) += 1;
        twice_wins += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    return static_cast<double>(twice_wins) / static_cast<double>(2 * pos * neg);
}

double auc_prc(std::span<const double> scores, std::span<const int> labels) {
    std::int64_t pos = 0, neg = 0;
    check_scored("auc_prc", scores, labels, pos, neg);
    const auto idx = order_by_score(scores, true);
    double area = 0, prev_recall = 0, prev_precision = 1;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (labels[idx[j++]] == 1 ? tp : fp) += 1;
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * (precision + prev_precision) / 2;
        prev_recall = recall;
        prev_precision = precision;
        i = j;
    }
    return area;
}

nlohmann::json ClassifierMetrics::to_json() const {
    return {{"accuracy", accuracy}, {"recall", recall}, {"precision", precision}, {"auc_roc", auc_roc}, {"auc_prc", auc_prc}};
}

ClassifierMetrics classify_and_report(const LabeledDataset& train, const LabeledDataset& test, std::uint64_t seed,
                                      const ClassifierOptions& opts) {
    train.validate();
    test.validate();
    require(train.size() > 0 && test.size() > 0, "classify_and_report: both splits must be non-empty");
    require(test.count(0) > 0 && test.count(1) > 0, "classify_and_report: the test split must contain both classes");
    require(train.batch.dim(1) == test.batch.dim(1) && train.batch.dim(2) == test.batch.dim(2),
            "classify_and_report: train and test series differ in shape");

    Rng rng(seed);
    std::vector<Real> y(train.labels.begin(), train.labels.end());
    const Tensor targets({train.size(), 1}, std::move(y));
    MlpParams model = init_mlp(rng, train.batch.dim(1) * train.batch.dim(2), opts.hidden, 1);
    fit_params(model, "classifier", train.size(), opts.budget, rng,
               [&](const MlpParams& p, std::span<const std::int64_t> idx) {
                   return bce_with_logits(mlp_forward(take_rows(train.batch, idx), p), take_rows(targets, idx));
               });

    const Tensor probs = sigmoid(mlp_forward(test.batch, model));
    std::vector<double> scores(probs.data().begin(), probs.data().end());
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= 0.5;
        const bool actual = test.labels[i] == 1;
        (predicted ? (actual ? tp : fp) : (actual ? fn : tn)) += 1;
    }
    ClassifierMetrics m;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.auc_roc = auc_roc(scores, test.labels);
    m.auc_prc = auc_prc(scores, test.labels);
    return m;
}

}  // namespace ttae
