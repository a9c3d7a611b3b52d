// Trains a small 5-point model on synthetic faces, then saves, reloads and
// evaluates it.

#include <iostream>

#include "mcl/mcl.hpp"

int main() {
    using namespace mcl;
    const auto pattern = pattern_for(5);
    const auto train = synth_generate(pattern, 120, 1);
    const auto val = synth_generate(pattern, 30, 2, {}, "val");

    PipelineConfig cfg;
    cfg.spec = NetworkSpec::for_pattern(5);
    cfg.spec.widths = {4, 8, 16, 16};
    cfg.spec.feature_dim = 32;
    for (StageConfig* s : {&cfg.pretrain, &cfg.weighting, &cfg.multicenter}) {
        s->max_iterations = 200;
        s->batch_size = 16;
        s->validate_every = 50;
        s->lr_decay_every = 100;
    }
    cfg.pretrain.initial_lr = 0.01;

    const auto res = run_full_pipeline<float>(train, val, cfg, 7);
    for (const auto& row : res.report)
        std::cout << row.model << ": mean error " << row.mean_error << "%, failure rate " << row.failure_rate << "%\n";

    save_model(res.models.am, cfg.spec, "quickstart_am.mcl");
    const auto [spec, am] = load_model<float>("quickstart_am.mcl");
    const auto img = normalize_pixels<float>(val.samples[0].image);
    const Shape s = predict_shape(am, 0, extract_features(am, img));
    for (std::size_t j = 0; j < s.landmarks(); ++j) std::cout << s.coords[2 * j] << ' ' << s.coords[2 * j + 1] << '\n';
}
