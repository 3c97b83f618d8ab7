#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "cmems/perturbation.hpp"
#include "cmems/synthesis.hpp"

namespace cmems {

/// Which trained network produces test-time predictions.
enum class NetworkSelector { First, Second, Average };

NetworkSelector parse_network_selector(const std::string& s);
std::string to_string(NetworkSelector s);

/// Training hyperparameters and component switches. Defaults follow the
/// reference ACDC-style setting (α = 1, λ_cmip = 1, λ_cmfp = 0.09).
struct TrainConfig {
    int batch_size = 12;
    double lr = 3e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double tau = 0.8;
    double alpha = 1.0;
    double lambda_cmip = 1.0;
    double lambda_cmfp = 0.09;
    std::int64_t max_iter = 2000;
    std::uint64_t seed = 0;
    std::int64_t eval_every = 200;
    double feature_drop_prob = 0.5;
    /// Network width: encoder channels are base·{1,2,4,8,16}.
    int base_width = 16;

    /// Map below-τ pixels to class 0 instead of excluding them.
    bool literal_eq3 = false;
    /// Pseudo-label passes run without dropout and with running BN statistics.
    bool pseudo_eval_mode = true;

    // Ablation switches.
    bool use_synthetic = true;   // SD: L_s term
    bool use_ip = true;          // IP: L_cmip term
    bool use_fp = true;          // FP: L_cmfp term
    bool cross_ip = true;        // CM on the image-perturbation pairing
    bool cross_fp = true;        // CM on the feature-perturbation pairing
    bool same_weak_exemplar = false;
    bool same_weak_synthetic = false;
    bool same_weak_unlabeled = false;

    WeakConfig weak;
    SynthesisConfig synthesis;
    NetworkSelector eval_network = NetworkSelector::First;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig read_train_config(const std::filesystem::path& path);
/// FNV-1a hash of the materialized config, ignoring max_iter and eval_every.
std::uint64_t config_hash(const TrainConfig& c);

}  // namespace cmems
