#pragma once

#include "ttae/aae.hpp"
#include "ttae/supervised.hpp"
#include "ttae/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ttae {

/// A batch with one binary label per sample. Augmentation only ever touches the train split.
struct LabeledDataset {
    Tensor batch;
    std::vector<int> labels;
    std::string split = "train";

    void validate() const;
    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t count(int label) const;
    /// Samples carrying `label`, in order.
    Tensor samples_with(int label) const;
};

/// One integer label per line.
std::vector<int> load_labels(const std::filesystem::path& path);
void save_labels(const std::vector<int>& labels, const std::filesystem::path& path);

/// Adds N(0, sigma^2) noise and clamps to [0, 1].
Tensor jitter(const Tensor& batch, double sigma, std::uint64_t seed);
/// Cyclic repetition of the samples up to target_count.
Tensor replicate(const Tensor& samples, std::int64_t target_count);

enum class AugmentMode { BalanceMinority, GrowPercent };
enum class AugmentMethod { Model, Replicate, Jitter };

std::string to_string(AugmentMode m);
std::string to_string(AugmentMethod m);
AugmentMode parse_augment_mode(const std::string& name);
AugmentMethod parse_augment_method(const std::string& name);

struct AugmentPlan {
    AugmentMode mode = AugmentMode::BalanceMinority;
    /// Percent growth for GrowPercent: one of 25, 50, 75, 100.
    std::int64_t amount = 100;
};

/// Number of extra samples per label the plan calls for.
std::map<int, std::int64_t> augment_counts(const LabeledDataset& train, const AugmentPlan& plan);

/// Appends generated samples; each label draws from its own trained generator.
LabeledDataset augment_with_model(const LabeledDataset& train, const std::map<int, ModelBundle>& generators,
                                  const AugmentPlan& plan, std::uint64_t seed);

/// Appends replicated or jittered copies of existing train samples.
LabeledDataset augment_with_baseline(const LabeledDataset& train, AugmentMethod method, const AugmentPlan& plan,
                                     std::uint64_t seed, double jitter_sigma = 0.03);

struct ClassifierMetrics {
    double accuracy = 0;
    double recall = 0;
    double precision = 0;
    double auc_roc = 0;
    double auc_prc = 0;

    nlohmann::json to_json() const;
};

/// Area under the ROC curve; ties count one half. Label 1 is the positive class.
double auc_roc(std::span<const double> scores, std::span<const int> labels);
/// Trapezoidal area under the precision-recall curve, starting from (recall 0, precision 1).
double auc_prc(std::span<const double> scores, std::span<const int> labels);

struct ClassifierOptions {
    FitBudget budget{1000, 64, 1e-3};
    std::int64_t hidden = 128;
};

/// Trains an MLP on `train` and scores it on `test` at threshold 0.5.
ClassifierMetrics classify_and_report(const LabeledDataset& train, const LabeledDataset& test, std::uint64_t seed,
                                      const ClassifierOptions& opts = {});

}  // namespace ttae
