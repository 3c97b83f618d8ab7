#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cmems/config.hpp"
#include "cmems/datamodel.hpp"
#include "cmems/objective.hpp"
#include "cmems/optimizer.hpp"
#include "cmems/segnet.hpp"

namespace cmems {

/// Raised when a loss term becomes NaN/Inf; the message names the term.
class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainData {
    ExemplarDataset exemplar;
    SyntheticDataset synthetic;
    UnlabeledDataset unlabeled;
    std::vector<TestVolume> validation;
    int num_classes = 0;
    std::vector<std::string> class_names;
};

/// Builds the synthetic set from the exemplar and the unlabeled pool.
TrainData make_train_data(const LoadedData& data, const TrainConfig& cfg);

struct TrainState {
    std::array<NetworkParams, 2> nets;
    Adam optimizer;
    std::int64_t iteration = 0;
};

UNetConfig network_config(const TrainConfig& cfg, int num_classes);
TrainState init_state(const TrainConfig& cfg, int num_classes);

/// Indices of one batch; the single exemplar repeats in every group.
struct Batch {
    std::vector<std::size_t> synthetic;
    std::vector<std::size_t> unlabeled;
    std::size_t size() const { return unlabeled.size(); }
};

/// Uniform with replacement. Throws ValidationError when a dataset is empty.
Batch sample_batch(const TrainData& data, int batch_size, Rng& rng);

/// Perturbed network inputs of one iteration; index m is the view of network m+1.
struct StepInputs {
    std::array<Tensor, 2> exemplar;
    std::array<PseudoLabel, 2> exemplar_target;
    std::array<Tensor, 2> synthetic;
    std::array<PseudoLabel, 2> synthetic_target;
    std::array<Tensor, 2> unlabeled_weak;
    std::array<Tensor, 2> unlabeled_strong;
};

/// Seed of every random draw made during iteration `iteration`.
std::uint64_t step_seed(const TrainConfig& cfg, std::int64_t iteration);

StepInputs prepare_inputs(const TrainData& data, const Batch& batch, const TrainConfig& cfg, std::uint64_t seed);

/// Y^W_{u,m} from network m on its own weak view. Does not modify the state.
std::array<PseudoLabel, 2> make_pseudo_labels(TrainState& state, const StepInputs& in, const TrainConfig& cfg,
                                              std::uint64_t seed);

/// Runs every gradient-bearing pass and returns the loss breakdown. When
/// `grads` is given, dL_total/dθ_m is added into grads[m].
LossBreakdown accumulate_loss(TrainState& state, const StepInputs& in, const std::array<PseudoLabel, 2>& pseudo,
                              const TrainConfig& cfg, std::uint64_t seed,
                              std::array<std::vector<real>, 2>* grads);

/// One full iteration: batch, perturbations, pseudo-labels, losses, one
/// optimizer step over both networks.
LossBreakdown train_step(TrainState& state, const TrainData& data, const TrainConfig& cfg);

struct IterationLog {
    std::int64_t iter = 0;
    LossBreakdown loss;
};
nlohmann::json to_json(const IterationLog& l);

struct FitOptions {
    /// Metrics log, checkpoints and evaluation log go here when set.
    std::optional<std::filesystem::path> out_dir;
    std::function<void(const IterationLog&)> on_step;
    std::function<void(std::int64_t iter, double val_dsc)> on_eval;
};

struct FitResult {
    TrainState state;
    std::vector<IterationLog> log;
    std::optional<double> best_val_dsc;
    std::int64_t best_iter = 0;
};

/// Trains until state.iteration == cfg.max_iter.
FitResult fit(const TrainData& data, const TrainConfig& cfg, TrainState state, const FitOptions& opts = {});
FitResult fit(const TrainData& data, const TrainConfig& cfg, const FitOptions& opts = {});

}  // namespace cmems
