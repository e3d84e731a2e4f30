#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "btsr/corpus.hpp"
#include "btsr/rng.hpp"

namespace btsr {

// Loss value plus its gradient with respect to the scores it consumed.
struct ScoreLoss {
    double value = 0.0;
    std::vector<double> grad;
};

// -[log s(pos) + sum_j log(1 - s(neg_j))] with s the logistic function.
double bce_loss(double pos_score, std::span<const double> neg_scores);
// grad[0] is d/d pos, grad[1 + j] is d/d neg_j.
ScoreLoss bce_loss_grad(double pos_score, std::span<const double> neg_scores);

// -log softmax(scores)[target]; target is a 0-based index into scores.
double ce_loss(std::span<const double> scores, std::size_t target);
ScoreLoss ce_loss_grad(std::span<const double> scores, std::size_t target);

// Softmax cross-entropy restricted to a candidate set.
double sce_loss(std::span<const double> candidate_scores, std::size_t target_position);
ScoreLoss sce_loss_grad(std::span<const double> candidate_scores, std::size_t target_position);

struct ViewBatch {
    Eigen::MatrixXd a;  // B x D
    Eigen::MatrixXd b;  // B x D
};

struct CorrelationOptions {
    // Scale each embedding to unit length before batch centering.
    bool row_normalize = true;
    // Columns whose centered norm is at or below this are treated as constant.
    double zero_variance_tol = 1e-12;
};

struct CorrelationMatrix {
    Eigen::MatrixXd c;  // D x D
    std::vector<Eigen::Index> constant_columns_a;
    std::vector<Eigen::Index> constant_columns_b;

    bool degenerate() const { return !constant_columns_a.empty() || !constant_columns_b.empty(); }
};

CorrelationMatrix cross_correlation(const ViewBatch& views, const CorrelationOptions& options = {});

// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2
double bt_loss(const Eigen::MatrixXd& c, double lambda);

struct BarlowTwinsResult {
    double loss = 0.0;
    CorrelationMatrix correlation;
    Eigen::MatrixXd grad_a;  // d loss / d views.a
    Eigen::MatrixXd grad_b;
};

// Barlow Twins loss on raw encoder outputs with gradients for both views.
BarlowTwinsResult barlow_twins(const ViewBatch& views, double lambda, const CorrelationOptions& options = {});

struct LossBundle {
    double pred = 0.0;
    double bt = 0.0;
    double total = 0.0;
    double alpha = 0.0;
    double lambda = 0.0;
};

LossBundle total_loss(double pred, double bt, double alpha, double lambda = 0.0);

// m distinct items from 1..catalog_size, none equal to target or in prefix.
std::vector<ItemId> sample_negatives(std::span<const ItemId> prefix, ItemId target, int catalog_size, int m, Rng& rng);

struct CandidateSet {
    std::vector<ItemId> items;  // distinct, contains target exactly once
    std::size_t target_position = 0;
};

// target plus K distinct uniformly drawn non-target items.
CandidateSet sample_candidates(ItemId target, int catalog_size, int k, Rng& rng);

// One pool of K + 1 distinct items shared by a batch; candidates_from_pool
// turns it into a per-example set of exactly K + 1 items.
std::vector<ItemId> sample_candidate_pool(int catalog_size, int k, Rng& rng);
CandidateSet candidates_from_pool(std::span<const ItemId> pool, ItemId target, int k);

}  // namespace btsr
