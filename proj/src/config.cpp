#include "cmems/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "cmems/datamodel.hpp"

namespace cmems {

NetworkSelector parse_network_selector(const std::string& s) {
    if (s == "1") return NetworkSelector::First;
    if (s == "2") return NetworkSelector::Second;
    if (s == "avg") return NetworkSelector::Average;
    throw ValidationError("network selector must be 1, 2 or avg (got '" + s + "')");
}

std::string to_string(NetworkSelector s) {
    switch (s) {
        case NetworkSelector::First: return "1";
        case NetworkSelector::Second: return "2";
        case NetworkSelector::Average: return "avg";
    }
    return "1";
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("invalid config: " + what); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr > 0)) fail("lr must be positive");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (!(tau > 0 && tau < 1)) fail("tau must lie in (0,1)");
    if (alpha < 0) fail("alpha must be >= 0");
    if (lambda_cmip < 0 || lambda_cmfp < 0) fail("loss weights must be >= 0");
    if (max_iter < 0) fail("max_iter must be >= 0");
    if (eval_every < 0) fail("eval_every must be >= 0");
    if (!(feature_drop_prob >= 0 && feature_drop_prob < 1)) fail("feature_drop_prob must lie in [0,1)");
    if (base_width < 1) fail("base_width must be >= 1");
    if (synthesis.per_background < 1) fail("synthesis.per_background must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"batch_size", c.batch_size},
        {"lr", c.lr},
        {"weight_decay", c.weight_decay},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"adam_eps", c.adam_eps},
        {"tau", c.tau},
        {"alpha", c.alpha},
        {"lambda_cmip", c.lambda_cmip},
        {"lambda_cmfp", c.lambda_cmfp},
        {"max_iter", c.max_iter},
        {"seed", c.seed},
        {"eval_every", c.eval_every},
        {"feature_drop_prob", c.feature_drop_prob},
        {"base_width", c.base_width},
        {"literal_eq3", c.literal_eq3},
        {"pseudo_eval_mode", c.pseudo_eval_mode},
        {"use_synthetic", c.use_synthetic},
        {"use_ip", c.use_ip},
        {"use_fp", c.use_fp},
        {"cross_ip", c.cross_ip},
        {"cross_fp", c.cross_fp},
        {"same_weak_exemplar", c.same_weak_exemplar},
        {"same_weak_synthetic", c.same_weak_synthetic},
        {"same_weak_unlabeled", c.same_weak_unlabeled},
        {"weak",
         {{"max_small_rotation_deg", c.weak.max_small_rotation_deg},
          {"flip_prob", c.weak.flip_prob},
          {"quarter_turns", c.weak.quarter_turns}}},
        {"synthesis", c.synthesis},
        {"eval_network", to_string(c.eval_network)},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    static const std::set<std::string> known = {
        "batch_size", "lr", "weight_decay", "beta1", "beta2", "adam_eps", "tau", "alpha", "lambda_cmip",
        "lambda_cmfp", "max_iter", "seed", "eval_every", "feature_drop_prob", "base_width", "literal_eq3",
        "pseudo_eval_mode", "use_synthetic", "use_ip", "use_fp", "cross_ip", "cross_fp", "same_weak_exemplar",
        "same_weak_synthetic", "same_weak_unlabeled", "weak", "synthesis", "eval_network"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ValidationError("unknown config key '" + key + "'");
    }
    const TrainConfig d;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.tau = j.value("tau", d.tau);
    c.alpha = j.value("alpha", d.alpha);
    c.lambda_cmip = j.value("lambda_cmip", d.lambda_cmip);
    c.lambda_cmfp = j.value("lambda_cmfp", d.lambda_cmfp);
    c.max_iter = j.value("max_iter", d.max_iter);
    c.seed = j.value("seed", d.seed);
    c.eval_every = j.value("eval_every", d.eval_every);
    c.feature_drop_prob = j.value("feature_drop_prob", d.feature_drop_prob);
    c.base_width = j.value("base_width", d.base_width);
    c.literal_eq3 = j.value("literal_eq3", d.literal_eq3);
    c.pseudo_eval_mode = j.value("pseudo_eval_mode", d.pseudo_eval_mode);
    c.use_synthetic = j.value("use_synthetic", d.use_synthetic);
    c.use_ip = j.value("use_ip", d.use_ip);
    c.use_fp = j.value("use_fp", d.use_fp);
    c.cross_ip = j.value("cross_ip", d.cross_ip);
    c.cross_fp = j.value("cross_fp", d.cross_fp);
    c.same_weak_exemplar = j.value("same_weak_exemplar", d.same_weak_exemplar);
    c.same_weak_synthetic = j.value("same_weak_synthetic", d.same_weak_synthetic);
    c.same_weak_unlabeled = j.value("same_weak_unlabeled", d.same_weak_unlabeled);
    c.weak = d.weak;
    if (j.contains("weak")) {
        const auto& w = j["weak"];
        c.weak.max_small_rotation_deg = w.value("max_small_rotation_deg", d.weak.max_small_rotation_deg);
        c.weak.flip_prob = w.value("flip_prob", d.weak.flip_prob);
        c.weak.quarter_turns = w.value("quarter_turns", d.weak.quarter_turns);
    }
    c.synthesis = j.contains("synthesis") ? j["synthesis"].get<SynthesisConfig>() : d.synthesis;
    c.eval_network = parse_network_selector(j.value("eval_network", std::string("1")));
    c.validate();
}

TrainConfig read_train_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IngestionError("missing or unreadable config: " + path.string());
    try {
        return nlohmann::json::parse(f).get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::uint64_t config_hash(const TrainConfig& c) {
    nlohmann::json j = c;
    // Run length and evaluation cadence do not change the trajectory.
    j.erase("max_iter");
    j.erase("eval_every");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace cmems
