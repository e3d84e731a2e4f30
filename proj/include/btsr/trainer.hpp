#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btsr/config.hpp"
#include "btsr/dataset.hpp"
#include "btsr/encoder.hpp"
#include "btsr/objectives.hpp"

namespace btsr {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The multi-task objective for one mini-batch.
struct ObjectiveSettings {
    LossKind loss = LossKind::Ce;
    double alpha = 0.0;
    double lambda = 0.0;
    bool bt_active = false;  // evaluate the Barlow Twins branch at all
    CorrelationOptions correlation{};
};

// Inputs of one batch. Prefixes are borrowed and must outlive the call.
struct BatchInputs {
    std::vector<std::span<const ItemId>> anchors;
    std::vector<ItemId> targets;
    std::vector<std::span<const ItemId>> partners;  // BT views; empty when inactive
    // Optional separate BT view of each anchor. When empty the anchor's
    // prediction pass is reused as its view.
    std::vector<std::span<const ItemId>> bt_anchors;
    std::vector<std::vector<ItemId>> negatives;     // BCE only, per example
    std::vector<ItemId> candidate_pool;             // SCE only, shared
    int sce_k = 0;
    std::optional<DropoutContext> dropout;          // slot is assigned per pass
};

// Mean prediction loss + alpha * BT loss. When `grads` is non-null it
// receives the exact gradient (it is overwritten, not accumulated).
LossBundle batch_objective(const Model& model, const ObjectiveSettings& settings, const BatchInputs& batch,
                           Parameters* grads, int threads = 1);

struct AdamState {
    Parameters m, v;
    std::uint64_t step = 0;
};

struct AdamSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// One decoupled-weight-decay Adam step. Weight decay applies to matrices
// (embeddings and projections), not to 1 x k gains and biases.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state, const AdamSettings& settings);

struct TrainLogRow {
    int epoch = 0;
    double pred = 0.0;
    double bt = 0.0;
    double total = 0.0;
    double val_ndcg10 = 0.0;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;

    // Deterministic CSV (no wall-clock column).
    std::string csv() const;
    // epoch,wall_seconds sidecar.
    std::string timing_csv() const;
};

struct TrainOptions {
    int threads = 1;
    bool record_steps = false;
    // Evaluate the BT branch even when alpha == 0 (its contribution is then
    // multiplied by zero). Used to check that alpha = 0 is an exact baseline.
    bool force_bt_path = false;
    // Never evaluate the BT branch regardless of alpha.
    bool disable_bt = false;
    std::function<void(const TrainLogRow&)> on_epoch;
};

struct TrainResult {
    Model best;
    Model last;
    TrainLog log;
    int best_epoch = 0;
    double best_val_ndcg10 = 0.0;
    std::vector<LossBundle> steps;
};

TrainResult train(const TrainConfig& config, const DatasetBundle& dataset, const TrainOptions& options = {});

struct TensorCheck {
    std::string name;
    std::size_t entries = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradcheckReport {
    LossKind loss = LossKind::Ce;
    double alpha = 0.0;
    double step = 1e-5;
    double tolerance = 1e-4;
    double max_rel_error = 0.0;
    std::vector<TensorCheck> tensors;
    bool passed = false;
};

struct GradcheckSettings {
    int num_items = 20;
    int dim = 8;
    int layers = 2;
    int heads = 2;
    int max_len = 6;
    int batch = 4;
    double dropout = 0.2;
    double alpha = 0.3;
    double lambda = 0.2;
    int sce_k = 5;
    int bce_m = 2;
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor for the elementwise relative error. Central
    // differences at step 1e-5 carry ~1e-10 of roundoff, which is all that
    // entries with an exactly zero gradient (e.g. key biases) ever show.
    double rel_floor = 1e-5;
    std::uint64_t seed = 7;
};

// |analytic - numeric| / max(|analytic|, |numeric|, rel_floor)
double relative_error(double analytic, double numeric, double floor);

// Central finite differences on every parameter entry of a toy model.
GradcheckReport gradcheck(LossKind loss, const GradcheckSettings& settings);

}  // namespace btsr
