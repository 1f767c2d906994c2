#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ramf/feature_io.hpp"
#include "ramf/model.hpp"

namespace ramf {

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

struct FoldPlan {
    std::array<Fold, 5> folds;
    uint64_t seed = 0;
};

// Label-stratified 5-fold plan: the five test sets are pairwise disjoint and
// cover the id set; per fold the remaining ids split so train:val:test stays
// near 70:10:20 (up to rounding).
FoldPlan plan_folds(const std::vector<std::string>& ids, const std::vector<int>& labels,
                    uint64_t seed);

struct TrainConfig {
    double lr = 1e-4;
    int epochs = 20;
    int batch_size = 16;
    uint64_t seed = 2021;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainResult {
    int best_epoch = -1;
    double best_val_macro_f1 = 0.0;
    std::vector<EpochStats> history;
    std::vector<Tensor> best_params;  // snapshot at the best validation epoch
};

// In-memory dataset keyed by video id.
struct Dataset {
    std::vector<FeatureBundle> bundles;
    std::map<std::string, size_t> index;

    static Dataset load(const DatasetManifest& manifest);
    const FeatureBundle& at(const std::string& id) const;
};

// Epoch loop with seeded shuffling, Adam updates, per-epoch validation
// macro-F1 and best-epoch snapshotting. Aborts with DivergedLoss on NaN.
TrainResult train(Model& model, const Fold& fold, const TrainConfig& config, const Dataset& data);

struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double f1_hate = 0.0;
    double precision_hate = 0.0;
    double recall_hate = 0.0;
    // Confusion counts with hate (label 1) as the positive class.
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Metrics from one confusion matrix; any 0/0 ratio is defined as 0.
MetricsReport metrics_from_predictions(const std::vector<int>& predictions,
                                       const std::vector<int>& labels);
MetricsReport evaluate(Model& model, const std::vector<std::string>& test_ids, const Dataset& data);

struct MetricsSummary {
    std::vector<MetricsReport> per_fold;
    MetricsReport mean;
    MetricsReport stddev;  // population std over folds
};

MetricsSummary summarize(const std::vector<MetricsReport>& reports);

struct EfficiencyReport {
    int64_t param_count = 0;
    int64_t flops_per_forward = 0;
    double latency_per_sample_s = 0.0;
    int latency_runs = 0;
};

// Parameter count by traversal, FLOPs by closed form, latency by wall clock
// over warm runs of predict() on the given bundle.
EfficiencyReport profile(Model& model, const FeatureBundle& sample, int latency_runs = 1000);

struct ContributionPoint {
    std::string video_id;
    int label = 0;
    double hate_contribution = 0.0;
    double nonhate_contribution = 0.0;
};

// Per-sample layer-2 attention mass on the hate / non-hate reasoning sources,
// ordered non-hate first. Requires a variant with those layer-2 slots.
std::vector<ContributionPoint> contribution_trend(Model& model, const Dataset& data);

}  // namespace ramf
