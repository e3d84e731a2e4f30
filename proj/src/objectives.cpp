#include "btsr/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "btsr/errors.hpp"
#include "btsr/log.hpp"

namespace btsr {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

ScoreLoss softmax_xent(std::span<const double> scores, std::size_t target) {
    if (target >= scores.size()) {
        throw IndexError("target index " + std::to_string(target) + " outside " + std::to_string(scores.size()) +
                         " scores");
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - mx);
    const double lse = mx + std::log(sum);

    ScoreLoss out;
    out.value = lse - scores[target];
    out.grad.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out.grad[i] = std::exp(scores[i] - lse);
    out.grad[target] -= 1.0;
    return out;
}

struct ViewNorm {
    Eigen::MatrixXd unit;      // row-normalized (or raw) embeddings
    Eigen::VectorXd row_norm;  // empty when row normalization is off
    Eigen::MatrixXd scaled;    // centered, column-normalized
    Eigen::VectorXd col_norm;
    std::vector<Eigen::Index> constant;
};

ViewNorm normalize_view(const Eigen::MatrixXd& z, const CorrelationOptions& opt) {
    ViewNorm v;
    v.unit = z;
    if (opt.row_normalize) {
        v.row_norm = z.rowwise().norm();
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            if (v.row_norm[r] > 0.0) v.unit.row(r) /= v.row_norm[r];
        }
    }
    Eigen::MatrixXd centered = v.unit.rowwise() - v.unit.colwise().mean();
    v.col_norm = centered.colwise().norm().transpose();
    v.scaled = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        if (v.col_norm[c] <= opt.zero_variance_tol) {
            v.constant.push_back(c);
        } else {
            v.scaled.col(c) = centered.col(c) / v.col_norm[c];
        }
    }
    return v;
}

Eigen::MatrixXd normalize_view_backward(const ViewNorm& v, const Eigen::MatrixXd& dscaled, const CorrelationOptions& opt) {
    Eigen::MatrixXd dcentered = Eigen::MatrixXd::Zero(dscaled.rows(), dscaled.cols());
    for (Eigen::Index c = 0; c < dscaled.cols(); ++c) {
        if (v.col_norm[c] <= opt.zero_variance_tol) continue;
        const auto a = v.scaled.col(c);
        dcentered.col(c) = (dscaled.col(c) - a * a.dot(dscaled.col(c))) / v.col_norm[c];
    }
    Eigen::MatrixXd dunit = dcentered.rowwise() - dcentered.colwise().mean();
    if (!opt.row_normalize) return dunit;
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(dunit.rows(), dunit.cols());
    for (Eigen::Index r = 0; r < dunit.rows(); ++r) {
        if (v.row_norm[r] <= 0.0) continue;
        const auto u = v.unit.row(r);
        dz.row(r) = (dunit.row(r) - u * u.dot(dunit.row(r))) / v.row_norm[r];
    }
    return dz;
}

void check_views(const ViewBatch& views) {
    if (views.a.rows() != views.b.rows() || views.a.cols() != views.b.cols()) {
        throw InvalidInputError("view shapes differ");
    }
    if (views.a.rows() < 2) throw InvalidInputError("cross-correlation needs a batch of at least 2");
    if (!views.a.allFinite() || !views.b.allFinite()) throw NumericalError("view batch");
}

void warn_constant(const CorrelationMatrix& c) {
    if (!c.degenerate()) return;
    log::warn("cross-correlation: " + std::to_string(c.constant_columns_a.size() + c.constant_columns_b.size()) +
              " constant embedding column(s); their correlations are set to 0");
}

std::vector<ItemId> sample_distinct(int catalog_size, int count, const std::unordered_set<ItemId>& excluded, Rng& rng) {
    std::size_t blocked = 0;
    for (ItemId i : excluded) blocked += (i >= 1 && i <= catalog_size) ? 1 : 0;
    const auto available = static_cast<std::size_t>(catalog_size) - blocked;
    if (count < 0 || static_cast<std::size_t>(count) > available) {
        throw SamplingError("cannot draw " + std::to_string(count) + " items: only " + std::to_string(available) +
                            " eligible in the catalog");
    }
    std::vector<ItemId> out;
    out.reserve(static_cast<std::size_t>(count));
    if (2 * static_cast<std::size_t>(count) <= available) {
        std::uniform_int_distribution<ItemId> pick(1, catalog_size);
        std::unordered_set<ItemId> taken;
        while (out.size() < static_cast<std::size_t>(count)) {
            const ItemId i = pick(rng);
            if (excluded.count(i) || !taken.insert(i).second) continue;
            out.push_back(i);
        }
        return out;
    }
    std::vector<ItemId> pool;
    pool.reserve(available);
    for (ItemId i = 1; i <= catalog_size; ++i) {
        if (!excluded.count(i)) pool.push_back(i);
    }
    for (std::size_t k = 0; k < static_cast<std::size_t>(count); ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
        out.push_back(pool[k]);
    }
    return out;
}

}  // namespace

double bce_loss(double pos, std::span<const double> negs) {
    double loss = softplus(-pos);
    for (double s : negs) loss += softplus(s);
    return loss;
}

ScoreLoss bce_loss_grad(double pos, std::span<const double> negs) {
    ScoreLoss out;
    out.value = bce_loss(pos, negs);
    out.grad.reserve(negs.size() + 1);
    out.grad.push_back(sigmoid(pos) - 1.0);
    for (double s : negs) out.grad.push_back(sigmoid(s));
    return out;
}

double ce_loss(std::span<const double> scores, std::size_t target) { return softmax_xent(scores, target).value; }

ScoreLoss ce_loss_grad(std::span<const double> scores, std::size_t target) { return softmax_xent(scores, target); }

double sce_loss(std::span<const double> candidate_scores, std::size_t target_position) {
    return softmax_xent(candidate_scores, target_position).value;
}

ScoreLoss sce_loss_grad(std::span<const double> candidate_scores, std::size_t target_position) {
    return softmax_xent(candidate_scores, target_position);
}

CorrelationMatrix cross_correlation(const ViewBatch& views, const CorrelationOptions& options) {
    check_views(views);
    auto va = normalize_view(views.a, options);
    auto vb = normalize_view(views.b, options);
    CorrelationMatrix out;
    out.c = va.scaled.transpose() * vb.scaled;
    out.constant_columns_a = std::move(va.constant);
    out.constant_columns_b = std::move(vb.constant);
    warn_constant(out);
    return out;
}

double bt_loss(const Eigen::MatrixXd& c, double lambda) {
    if (c.rows() != c.cols()) throw InvalidInputError("correlation matrix must be square");
    double on = 0.0;
    double off = 0.0;
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        for (Eigen::Index i = 0; i < c.rows(); ++i) {
            if (i == j) {
                on += (1.0 - c(i, i)) * (1.0 - c(i, i));
            } else {
                off += c(i, j) * c(i, j);
            }
        }
    }
    return on + lambda * off;
}

BarlowTwinsResult barlow_twins(const ViewBatch& views, double lambda, const CorrelationOptions& options) {
    check_views(views);
    const auto va = normalize_view(views.a, options);
    const auto vb = normalize_view(views.b, options);

    BarlowTwinsResult r;
    r.correlation.c = va.scaled.transpose() * vb.scaled;
    r.correlation.constant_columns_a = va.constant;
    r.correlation.constant_columns_b = vb.constant;
    warn_constant(r.correlation);
    const auto& c = r.correlation.c;
    r.loss = bt_loss(c, lambda);

    Eigen::MatrixXd dc = 2.0 * lambda * c;
    for (Eigen::Index i = 0; i < c.rows(); ++i) dc(i, i) = -2.0 * (1.0 - c(i, i));

    r.grad_a = normalize_view_backward(va, vb.scaled * dc.transpose(), options);
    r.grad_b = normalize_view_backward(vb, va.scaled * dc, options);
    return r;
}

LossBundle total_loss(double pred, double bt, double alpha, double lambda) {
    if (!(alpha >= 0.0)) throw InvalidInputError("alpha must be >= 0");
    return LossBundle{pred, bt, pred + alpha * bt, alpha, lambda};
}

std::vector<ItemId> sample_negatives(std::span<const ItemId> prefix, ItemId target, int catalog_size, int m, Rng& rng) {
    if (m < 1) throw InvalidInputError("number of negatives must be >= 1");
    std::unordered_set<ItemId> excluded(prefix.begin(), prefix.end());
    excluded.insert(target);
    excluded.erase(kPaddingId);
    return sample_distinct(catalog_size, m, excluded, rng);
}

CandidateSet sample_candidates(ItemId target, int catalog_size, int k, Rng& rng) {
    if (k < 1) throw InvalidInputError("candidate count K must be >= 1");
    if (target < 1 || target > catalog_size) throw IndexError("target outside the catalog");
    CandidateSet out;
    out.items.push_back(target);
    auto negs = sample_distinct(catalog_size, k, {target}, rng);
    out.items.insert(out.items.end(), negs.begin(), negs.end());
    out.target_position = 0;
    return out;
}

std::vector<ItemId> sample_candidate_pool(int catalog_size, int k, Rng& rng) {
    if (k < 1) throw InvalidInputError("candidate count K must be >= 1");
    if (k > catalog_size - 1) {
        throw SamplingError("K = " + std::to_string(k) + " exceeds catalog size minus one");
    }
    return sample_distinct(catalog_size, std::min(k + 1, catalog_size), {}, rng);
}

CandidateSet candidates_from_pool(std::span<const ItemId> pool, ItemId target, int k) {
    CandidateSet out;
    out.items.reserve(static_cast<std::size_t>(k) + 1);
    out.items.push_back(target);
    for (ItemId i : pool) {
        if (out.items.size() == static_cast<std::size_t>(k) + 1) break;
        if (i != target) out.items.push_back(i);
    }
    if (out.items.size() != static_cast<std::size_t>(k) + 1) throw SamplingError("candidate pool too small");
    return out;
}

}  // namespace btsr
