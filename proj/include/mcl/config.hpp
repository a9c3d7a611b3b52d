#pragma once

// Run configuration read from a JSON file. Every key is optional and
// defaults to the full-scale setting; unknown keys are rejected so typos fail
// loudly.
//
// {
//   "pattern": 5,
//   "seed": 7,
//   "output_dir": "runs/x",
//   "data": {"train": "...", "val": "...", "test": "..."},
//   "network": {"widths": [32, 64, 128, 128], "feature_dim": 512},
//   "alpha": 125,
//   "pretrain":    {"max_iterations": 180000, "initial_lr": 0.02, ...},
//   "weighting":   {"max_iterations": 60000,  "initial_lr": 0.001, ...},
//   "multicenter": {...},
//   "augmentation": {"enabled": true, "rotation_degrees": [-15, 0, 15], ...}
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "mcl/errors.hpp"
#include "mcl/training.hpp"

namespace mcl {

/// Bad or inconsistent configuration (maps to the CLI's usage exit code).
class ConfigError : public Error {
public:
    using Error::Error;
};

struct RunConfig {
    int pattern = 5;
    std::optional<std::uint64_t> seed;
    std::string output_dir = "out";
    std::string train_path, val_path, test_path;
    PipelineConfig pipeline;

    void validate() const {
        if (!is_supported_pattern(pattern)) throw ConfigError("pattern must be 5, 29 or 68, got " + std::to_string(pattern));
        try {
            pipeline.spec.validate();
            pipeline.pretrain.validate("pretrain");
            pipeline.weighting.validate("weighting");
            pipeline.multicenter.validate("multicenter");
            pipeline.augment_params.validate();
        } catch (const ContractError& e) {
            throw ConfigError(e.what());
        }
        if (pipeline.spec.n_landmarks != pattern) throw ConfigError("network landmark count does not match pattern");
        if (!(pipeline.alpha > 1.0)) throw ConfigError("alpha must be > 1");
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <typename V>
void read_key(const json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

inline StageConfig read_stage(const json& j, StageConfig c, const std::string& where) {
    reject_unknown(j,
                   {"max_iterations", "initial_lr", "lr_decay_factor", "lr_decay_every", "batch_size", "momentum",
                    "weight_decay", "validate_every", "convergence_patience"},
                   where);
    read_key(j, "max_iterations", c.max_iterations, where);
    read_key(j, "initial_lr", c.initial_lr, where);
    read_key(j, "lr_decay_factor", c.lr_decay_factor, where);
    read_key(j, "lr_decay_every", c.lr_decay_every, where);
    read_key(j, "batch_size", c.batch_size, where);
    read_key(j, "momentum", c.momentum, where);
    read_key(j, "weight_decay", c.weight_decay, where);
    read_key(j, "validate_every", c.validate_every, where);
    read_key(j, "convergence_patience", c.convergence_patience, where);
    return c;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::read_key;
    detail::reject_unknown(j, {"pattern", "seed", "output_dir", "data", "network", "alpha", "pretrain", "weighting",
                               "multicenter", "augmentation"},
                           "config");
    RunConfig rc;
    read_key(j, "pattern", rc.pattern, "config");
    if (!is_supported_pattern(rc.pattern)) throw ConfigError("pattern must be 5, 29 or 68, got " + std::to_string(rc.pattern));
    if (j.contains("seed")) {
        std::uint64_t s = 0;
        read_key(j, "seed", s, "config");
        rc.seed = s;
    }
    read_key(j, "output_dir", rc.output_dir, "config");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown(d, {"train", "val", "test"}, "data");
        read_key(d, "train", rc.train_path, "data");
        read_key(d, "val", rc.val_path, "data");
        read_key(d, "test", rc.test_path, "data");
    }
    auto& p = rc.pipeline;
    p.spec = NetworkSpec::for_pattern(rc.pattern);
    if (j.contains("network")) {
        const auto& n = j.at("network");
        detail::reject_unknown(n, {"widths", "feature_dim"}, "network");
        read_key(n, "widths", p.spec.widths, "network");
        read_key(n, "feature_dim", p.spec.feature_dim, "network");
    }
    read_key(j, "alpha", p.alpha, "config");
    if (j.contains("pretrain")) p.pretrain = detail::read_stage(j.at("pretrain"), p.pretrain, "pretrain");
    if (j.contains("weighting")) p.weighting = detail::read_stage(j.at("weighting"), p.weighting, "weighting");
    if (j.contains("multicenter")) p.multicenter = detail::read_stage(j.at("multicenter"), p.multicenter, "multicenter");
    if (j.contains("augmentation")) {
        const auto& a = j.at("augmentation");
        detail::reject_unknown(a,
                               {"enabled", "rotation_degrees", "scale_factors", "translation_offsets", "flip",
                                "compression_qualities", "max_outputs"},
                               "augmentation");
        read_key(a, "enabled", p.augment, "augmentation");
        read_key(a, "rotation_degrees", p.augment_params.rotation_degrees, "augmentation");
        read_key(a, "scale_factors", p.augment_params.scale_factors, "augmentation");
        read_key(a, "translation_offsets", p.augment_params.translation_offsets, "augmentation");
        read_key(a, "flip", p.augment_params.do_flip, "augmentation");
        read_key(a, "compression_qualities", p.augment_params.compression_qualities, "augmentation");
        read_key(a, "max_outputs", p.augment_params.max_outputs, "augmentation");
    } else {
        p.augment = true;
    }
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

}  // namespace mcl
