#include <benchmark/benchmark.h>

#include "ramf/feature_io.hpp"
#include "ramf/lgcf.hpp"
#include "ramf/model.hpp"
#include "ramf/random.hpp"
#include "ramf/sca.hpp"

using namespace ramf;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Xoshiro256ss& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.gaussian();
    return t;
}

FeatureBundle random_bundle(const std::vector<ModalitySpec>& specs, uint64_t seed) {
    FeatureBundle b;
    b.video_id = "bench";
    b.label = 0;
    Xoshiro256ss rng(seed);
    for (const auto& spec : specs) {
        FeatureMatrix m;
        m.rows = spec.seq_len;
        m.cols = spec.feat_dim;
        m.data.resize(static_cast<size_t>(spec.seq_len) * spec.feat_dim);
        for (float& v : m.data) v = static_cast<float>(rng.gaussian());
        b.features[spec.name] = std::move(m);
    }
    return b;
}

void BM_lgcf_forward(benchmark::State& state) {
    const int in_dim = static_cast<int>(state.range(0));
    LGCFConfig config;
    config.in_dim = in_dim;
    config.hidden_dim = 512;
    config.unified_dim = 256;
    ParamStore params;
    Xoshiro256ss rng(1);
    LGCFState lgcf = lgcf_init(config, params, "lgcf", rng);
    Tensor x = random_tensor({100, in_dim}, rng);
    for (auto _ : state) {
        Var z = lgcf_forward(make_const(x), lgcf, config);
        benchmark::DoNotOptimize(z->val.data.data());
    }
}
BENCHMARK(BM_lgcf_forward)->Arg(40)->Arg(768);

void BM_sca_forward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    SCAConfig config;
    ParamStore params;
    Xoshiro256ss rng(2);
    SCAState sca = sca_init(config, params, "sca", rng);
    Tensor z = random_tensor({n, config.model_dim}, rng);
    for (auto _ : state) {
        Var y = sca_forward(make_const(z), sca, config, nullptr);
        benchmark::DoNotOptimize(y->val.data.data());
    }
}
BENCHMARK(BM_sca_forward)->Arg(3)->Arg(4)->Arg(6);

void BM_model_predict(benchmark::State& state) {
    const bool paper = state.range(0) != 0;
    auto specs = paper ? paper_spec_set() : desk_spec_set();
    ModelConfig config = paper ? paper_model_config(Variant::RAMF, specs)
                               : desk_model_config(Variant::RAMF, specs);
    Model model = make_variant(config, 3);
    FeatureBundle bundle = random_bundle(specs, 4);
    for (auto _ : state) {
        Prediction p = predict(model, bundle);
        benchmark::DoNotOptimize(p.prob_hate);
    }
}
BENCHMARK(BM_model_predict)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_model_train_step(benchmark::State& state) {
    auto specs = desk_spec_set();
    Model model = make_variant(desk_model_config(Variant::RAMF, specs), 5);
    FeatureBundle b0 = random_bundle(specs, 6);
    FeatureBundle b1 = random_bundle(specs, 7);
    b1.label = 1;
    std::vector<const FeatureBundle*> batch{&b0, &b1};
    AdamOptimizer opt(model.params, 1e-4);
    for (auto _ : state) {
        model.params.zero_grad();
        Var loss = batch_loss(model, batch);
        backward(loss);
        opt.step(model.params);
        benchmark::DoNotOptimize(loss->val.data[0]);
    }
}
BENCHMARK(BM_model_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
