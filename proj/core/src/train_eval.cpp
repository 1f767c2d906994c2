#include "ramf/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ramf/errors.hpp"
#include "ramf/random.hpp"

namespace ramf {

namespace {

// Splits `count` into 5 block sizes, handing the +1 remainders to consecutive
// blocks starting at *offset (mod 5). Rotating the offset across label classes
// keeps the combined block sizes within one item of count/5.
std::array<int, 5> block_sizes(int count, int* offset) {
    std::array<int, 5> sizes;
    sizes.fill(count / 5);
    const int rem = count % 5;
    for (int r = 0; r < rem; ++r) sizes[(*offset + r) % 5] += 1;
    *offset = (*offset + rem) % 5;
    return sizes;
}

}  // namespace

FoldPlan plan_folds(const std::vector<std::string>& ids, const std::vector<int>& labels,
                    uint64_t seed) {
    if (ids.size() != labels.size()) {
        raise(ErrorKind::InvalidArgument, "ids and labels length mismatch");
    }
    if (ids.size() < 10) {
        raise(ErrorKind::TooFewSamples,
              "need at least 10 samples for a 70/10/20 five-fold plan, got " +
                  std::to_string(ids.size()));
    }

    // Group ids by label and shuffle each group with the master seed.
    std::map<int, std::vector<std::string>> by_label;
    for (size_t i = 0; i < ids.size(); ++i) by_label[labels[i]].push_back(ids[i]);
    for (auto& [label, group] : by_label) {
        Xoshiro256ss rng(mix_seed(seed, 0x746573ULL + static_cast<uint64_t>(label)));
        rng.shuffle(group);
    }

    FoldPlan plan;
    plan.seed = seed;

    // Disjoint, stratified test blocks.
    std::array<std::vector<std::string>, 5> test_blocks;
    int offset = 0;
    for (const auto& [label, group] : by_label) {
        auto sizes = block_sizes(static_cast<int>(group.size()), &offset);
        size_t pos = 0;
        for (int k = 0; k < 5; ++k) {
            for (int j = 0; j < sizes[k]; ++j) test_blocks[k].push_back(group[pos++]);
        }
    }

    std::map<std::string, int> label_of;
    for (size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = labels[i];

    const int n_total = static_cast<int>(ids.size());
    for (int k = 0; k < 5; ++k) {
        Fold& fold = plan.folds[static_cast<size_t>(k)];
        fold.test_ids = test_blocks[static_cast<size_t>(k)];

        std::map<int, std::vector<std::string>> rest_by_label;
        for (int other = 0; other < 5; ++other) {
            if (other == k) continue;
            for (const auto& id : test_blocks[static_cast<size_t>(other)]) {
                rest_by_label[label_of[id]].push_back(id);
            }
        }
        const int rest_total = n_total - static_cast<int>(fold.test_ids.size());
        // Validation is 10% of the full set, distributed over classes
        // proportionally (largest remainder).
        const int val_total = static_cast<int>(std::lround(0.1 * n_total));
        std::vector<std::pair<double, int>> remainders;
        std::map<int, int> val_counts;
        int assigned = 0;
        for (const auto& [label, group] : rest_by_label) {
            double exact = static_cast<double>(val_total) * group.size() / rest_total;
            int base = static_cast<int>(exact);
            val_counts[label] = base;
            assigned += base;
            remainders.push_back({exact - base, label});
        }
        std::sort(remainders.begin(), remainders.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        for (int i = 0; i < val_total - assigned && i < static_cast<int>(remainders.size()); ++i) {
            val_counts[remainders[static_cast<size_t>(i)].second] += 1;
        }

        for (auto& [label, group] : rest_by_label) {
            Xoshiro256ss rng(mix_seed(seed, 0xf01dULL * (static_cast<uint64_t>(k) + 1) +
                                                static_cast<uint64_t>(label)));
            rng.shuffle(group);
            const int n_val = std::min<int>(val_counts[label], static_cast<int>(group.size()));
            for (int i = 0; i < static_cast<int>(group.size()); ++i) {
                (i < n_val ? fold.val_ids : fold.train_ids).push_back(group[static_cast<size_t>(i)]);
            }
        }
    }
    return plan;
}

Dataset Dataset::load(const DatasetManifest& manifest) {
    Dataset data;
    data.bundles.reserve(manifest.records.size());
    for (const auto& rec : manifest.records) {
        data.bundles.push_back(load_bundle(manifest, rec.video_id));
        data.index[rec.video_id] = data.bundles.size() - 1;
    }
    return data;
}

const FeatureBundle& Dataset::at(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) raise(ErrorKind::MissingRecord, "no bundle for id '" + id + "'");
    return bundles[it->second];
}

namespace {

double validation_macro_f1(Model& model, const std::vector<std::string>& ids, const Dataset& data) {
    std::vector<int> preds, labels;
    preds.reserve(ids.size());
    labels.reserve(ids.size());
    for (const auto& id : ids) {
        const FeatureBundle& b = data.at(id);
        preds.push_back(predict(model, b).y_hat);
        labels.push_back(b.label);
    }
    return metrics_from_predictions(preds, labels).macro_f1;
}

}  // namespace

TrainResult train(Model& model, const Fold& fold, const TrainConfig& config, const Dataset& data) {
    if (fold.train_ids.empty()) raise(ErrorKind::TooFewSamples, "empty training split");
    AdamOptimizer optimizer(model.params, config.lr);
    TrainResult result;

    std::vector<size_t> order(fold.train_ids.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Xoshiro256ss rng(mix_seed(config.seed, 0xe90cULL + static_cast<uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        int batch_count = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<const FeatureBundle*> batch;
            for (size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
                batch.push_back(&data.at(fold.train_ids[order[i]]));
            }
            model.params.zero_grad();
            Var loss = batch_loss(model, batch);
            const double loss_value = loss->val.data[0];
            if (!std::isfinite(loss_value)) {
                raise(ErrorKind::DivergedLoss,
                      "loss " + std::to_string(loss_value) + " at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batch_count));
            }
            backward(loss);
            optimizer.step(model.params);
            loss_sum += loss_value;
            ++batch_count;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batch_count ? loss_sum / batch_count : 0.0;
        stats.val_macro_f1 =
            fold.val_ids.empty() ? 0.0 : validation_macro_f1(model, fold.val_ids, data);
        result.history.push_back(stats);

        // Ties keep the later epoch: the checkpoint written is the last one
        // whose validation score matches the best seen.
        if (result.best_epoch < 0 || stats.val_macro_f1 >= result.best_val_macro_f1) {
            result.best_epoch = epoch;
            result.best_val_macro_f1 = stats.val_macro_f1;
            result.best_params = model.params.snapshot_values();
        }
    }
    if (!result.best_params.empty()) model.params.restore_values(result.best_params);
    return result;
}

MetricsReport metrics_from_predictions(const std::vector<int>& predictions,
                                       const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        raise(ErrorKind::InvalidArgument, "predictions/labels size mismatch or empty");
    }
    MetricsReport r;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const bool pred_hate = predictions[i] == 1;
        const bool is_hate = labels[i] == 1;
        if (pred_hate && is_hate) ++r.tp;
        else if (pred_hate && !is_hate) ++r.fp;
        else if (!pred_hate && is_hate) ++r.fn;
        else ++r.tn;
    }
    const auto ratio = [](int64_t num, int64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    const int64_t n = r.tp + r.fp + r.tn + r.fn;
    r.accuracy = ratio(r.tp + r.tn, n);
    r.precision_hate = ratio(r.tp, r.tp + r.fp);
    r.recall_hate = ratio(r.tp, r.tp + r.fn);
    r.f1_hate = (r.precision_hate + r.recall_hate) == 0.0
                    ? 0.0
                    : 2.0 * r.precision_hate * r.recall_hate / (r.precision_hate + r.recall_hate);
    const double precision_non = ratio(r.tn, r.tn + r.fn);
    const double recall_non = ratio(r.tn, r.tn + r.fp);
    const double f1_non = (precision_non + recall_non) == 0.0
                              ? 0.0
                              : 2.0 * precision_non * recall_non / (precision_non + recall_non);
    r.macro_f1 = 0.5 * (r.f1_hate + f1_non);
    return r;
}

MetricsReport evaluate(Model& model, const std::vector<std::string>& test_ids, const Dataset& data) {
    if (test_ids.empty()) raise(ErrorKind::EmptyTestSet, "evaluate called with no test ids");
    std::vector<int> preds, labels;
    preds.reserve(test_ids.size());
    labels.reserve(test_ids.size());
    for (const auto& id : test_ids) {
        const FeatureBundle& b = data.at(id);
        preds.push_back(predict(model, b).y_hat);
        labels.push_back(b.label);
    }
    return metrics_from_predictions(preds, labels);
}

MetricsSummary summarize(const std::vector<MetricsReport>& reports) {
    MetricsSummary s;
    s.per_fold = reports;
    const double n = static_cast<double>(reports.size());
    auto fold_stats = [&](double MetricsReport::* field, double& mean, double& stddev) {
        double sum = 0.0;
        for (const auto& r : reports) sum += r.*field;
        mean = sum / n;
        double var = 0.0;
        for (const auto& r : reports) var += (r.*field - mean) * (r.*field - mean);
        stddev = std::sqrt(var / n);
    };
    fold_stats(&MetricsReport::accuracy, s.mean.accuracy, s.stddev.accuracy);
    fold_stats(&MetricsReport::macro_f1, s.mean.macro_f1, s.stddev.macro_f1);
    fold_stats(&MetricsReport::f1_hate, s.mean.f1_hate, s.stddev.f1_hate);
    fold_stats(&MetricsReport::precision_hate, s.mean.precision_hate, s.stddev.precision_hate);
    fold_stats(&MetricsReport::recall_hate, s.mean.recall_hate, s.stddev.recall_hate);
    return s;
}

EfficiencyReport profile(Model& model, const FeatureBundle& sample, int latency_runs) {
    EfficiencyReport report;
    report.param_count = model.params.param_count();
    report.flops_per_forward = flops_per_forward(model);
    report.latency_runs = latency_runs;
    if (latency_runs > 0) {
        for (int i = 0; i < 3; ++i) predict(model, sample);  // warmup
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < latency_runs; ++i) predict(model, sample);
        const auto t1 = std::chrono::steady_clock::now();
        report.latency_per_sample_s =
            std::chrono::duration<double>(t1 - t0).count() / latency_runs;
    }
    return report;
}

std::vector<ContributionPoint> contribution_trend(Model& model, const Dataset& data) {
    auto sources = layer2_reasoning_sources(model.config.variant);
    if (!sources) {
        raise(ErrorKind::VariantWithoutLayer2,
              std::string("variant ") + variant_name(model.config.variant) +
                  " has no layer-2 reasoning sources to chart");
    }
    std::vector<const FeatureBundle*> ordered;
    ordered.reserve(data.bundles.size());
    for (const auto& b : data.bundles) ordered.push_back(&b);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const FeatureBundle* a, const FeatureBundle* b) { return a->label < b->label; });

    std::vector<ContributionPoint> out;
    out.reserve(ordered.size());
    for (const FeatureBundle* b : ordered) {
        ForwardTraces traces;
        predict(model, *b, &traces);
        if (!traces.has_layer2) {
            raise(ErrorKind::VariantWithoutLayer2, "no layer-2 attention trace available");
        }
        ContributionPoint p;
        p.video_id = b->video_id;
        p.label = b->label;
        p.hate_contribution = extract_contribution(traces.layer2, sources->first);
        p.nonhate_contribution = extract_contribution(traces.layer2, sources->second);
        out.push_back(p);
    }
    return out;
}

}  // namespace ramf
