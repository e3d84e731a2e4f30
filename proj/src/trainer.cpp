#include "btsr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "btsr/errors.hpp"
#include "btsr/evaluator.hpp"
#include "btsr/io.hpp"
#include "btsr/log.hpp"
#include "btsr/pairing.hpp"
#include "btsr/parallel.hpp"

namespace btsr {

namespace {

// Prediction loss of one example plus what its backward pass needs.
struct ExampleLoss {
    double value = 0.0;
    std::vector<ItemId> items;    // scored items
    std::vector<double> dscores;  // d(batch loss)/d(score), already divided by B
    Vector dz;
};

ExampleLoss prediction_loss(const Model& model, const ObjectiveSettings& s, const BatchInputs& batch, std::size_t b,
                            const Vector& z, double inv_batch) {
    const auto& emb = model.params.item_embeddings;
    const ItemId target = batch.targets[b];
    ExampleLoss out;
    ScoreLoss loss;
    switch (s.loss) {
        case LossKind::Ce: {
            const Vector scores = score_all(model, z);
            loss = ce_loss_grad(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                                static_cast<std::size_t>(target - 1));
            out.items.resize(static_cast<std::size_t>(scores.size()));
            std::iota(out.items.begin(), out.items.end(), 1);
            break;
        }
        case LossKind::Sce: {
            auto cand = candidates_from_pool(batch.candidate_pool, target, batch.sce_k);
            std::vector<double> scores;
            scores.reserve(cand.items.size());
            for (ItemId i : cand.items) scores.push_back(emb.row(i).dot(z));
            loss = sce_loss_grad(scores, cand.target_position);
            out.items = std::move(cand.items);
            break;
        }
        case LossKind::Bce: {
            const auto& negs = batch.negatives.at(b);
            std::vector<double> neg_scores;
            neg_scores.reserve(negs.size());
            for (ItemId i : negs) neg_scores.push_back(emb.row(i).dot(z));
            loss = bce_loss_grad(emb.row(target).dot(z), neg_scores);
            out.items.push_back(target);
            out.items.insert(out.items.end(), negs.begin(), negs.end());
            break;
        }
    }
    out.value = loss.value;
    out.dscores = std::move(loss.grad);
    out.dz = Vector::Zero(z.size());
    for (std::size_t k = 0; k < out.items.size(); ++k) {
        out.dscores[k] *= inv_batch;
        out.dz += out.dscores[k] * emb.row(out.items[k]).transpose();
    }
    return out;
}

std::vector<ForwardTrace> forward_all(const Model& model, std::span<const std::span<const ItemId>> prefixes,
                                      const std::optional<DropoutContext>& dropout, std::uint64_t slot_base,
                                      int threads) {
    std::vector<ForwardTrace> traces(prefixes.size());
    parallel_for(prefixes.size(), threads, [&](std::size_t b) {
        if (dropout) {
            DropoutContext ctx = *dropout;
            ctx.slot = slot_base + b;
            traces[b] = forward(model, prefixes[b], &ctx);
        } else {
            traces[b] = forward(model, prefixes[b]);
        }
    });
    return traces;
}

Matrix stack_outputs(const std::vector<ForwardTrace>& traces, int dim) {
    Matrix z(static_cast<Eigen::Index>(traces.size()), dim);
    for (std::size_t b = 0; b < traces.size(); ++b) z.row(static_cast<Eigen::Index>(b)) = traces[b].output.transpose();
    return z;
}

bool decays(const Matrix& m) { return m.rows() > 1; }

}  // namespace

LossBundle batch_objective(const Model& model, const ObjectiveSettings& s, const BatchInputs& batch, Parameters* grads,
                           int threads) {
    const std::size_t B = batch.anchors.size();
    if (B == 0) throw InvalidInputError("empty batch");
    if (batch.targets.size() != B) throw InvalidInputError("one target per anchor required");
    if (s.bt_active && batch.partners.size() != B) throw InvalidInputError("one partner per anchor required");
    const bool own_views = s.bt_active && !batch.bt_anchors.empty();
    if (own_views && batch.bt_anchors.size() != B) throw InvalidInputError("one BT view per anchor required");

    const int dim = model.config.dim;
    auto anchors = forward_all(model, batch.anchors, batch.dropout, 0, threads);
    std::vector<ForwardTrace> partners;
    std::vector<ForwardTrace> views_a;
    if (s.bt_active) partners = forward_all(model, batch.partners, batch.dropout, B, threads);
    if (own_views) views_a = forward_all(model, batch.bt_anchors, batch.dropout, 2 * B, threads);
    const auto& view_a = own_views ? views_a : anchors;

    const double inv_batch = 1.0 / static_cast<double>(B);
    std::vector<ExampleLoss> losses(B);
    parallel_for(B, threads, [&](std::size_t b) {
        losses[b] = prediction_loss(model, s, batch, b, anchors[b].output, inv_batch);
    });
    double pred = 0.0;
    for (const auto& l : losses) pred += l.value;
    pred *= inv_batch;

    double bt = 0.0;
    Matrix dza, dzb;
    if (s.bt_active) {
        ViewBatch views{stack_outputs(view_a, dim), stack_outputs(partners, dim)};
        auto res = barlow_twins(views, s.lambda, s.correlation);
        bt = res.loss;
        dza = s.alpha * res.grad_a;
        dzb = s.alpha * res.grad_b;
    }
    const LossBundle bundle = total_loss(pred, bt, s.alpha, s.lambda);
    if (grads == nullptr) return bundle;

    // Per-example gradients, summed in example order so the result does not
    // depend on the thread count.
    grads->set_zero();
    const std::size_t group = static_cast<std::size_t>(std::max(1, threads));
    std::vector<Parameters> buffers(std::min(group, B), grads->zeros_like());
    for (std::size_t start = 0; start < B; start += group) {
        const std::size_t count = std::min(group, B - start);
        parallel_for(count, threads, [&](std::size_t k) {
            const std::size_t b = start + k;
            auto& g = buffers[k];
            g.set_zero();
            const auto& l = losses[b];
            const Vector& z = anchors[b].output;
            for (std::size_t j = 0; j < l.items.size(); ++j) {
                g.item_embeddings.row(l.items[j]) += l.dscores[j] * z.transpose();
            }
            Vector dz = l.dz;
            if (s.bt_active && !own_views) dz += dza.row(static_cast<Eigen::Index>(b)).transpose();
            backward(model, anchors[b], dz, g);
            if (own_views) backward(model, views_a[b], dza.row(static_cast<Eigen::Index>(b)).transpose(), g);
            if (s.bt_active) backward(model, partners[b], dzb.row(static_cast<Eigen::Index>(b)).transpose(), g);
        });
        for (std::size_t k = 0; k < count; ++k) grads->add_scaled(buffers[k], 1.0);
    }
    grads->item_embeddings.row(kPaddingId).setZero();
    return bundle;
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state, const AdamSettings& a) {
    if (state.step == 0) {
        state.m = params.zeros_like();
        state.v = params.zeros_like();
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));

    std::vector<const Matrix*> g;
    std::vector<Matrix*> m, v;
    grads.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });
    state.m.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
    state.v.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });

    std::size_t k = 0;
    params.for_each([&](const std::string&, Matrix& p) {
        auto& mk = *m[k];
        auto& vk = *v[k];
        const auto& gk = *g[k];
        mk = a.beta1 * mk + (1.0 - a.beta1) * gk;
        vk.array() = a.beta2 * vk.array() + (1.0 - a.beta2) * gk.array().square();
        p.array() -= a.lr * ((mk.array() / c1) / ((vk.array() / c2).sqrt() + a.eps));
        if (a.weight_decay > 0.0 && decays(p)) p *= (1.0 - a.lr * a.weight_decay);
        ++k;
    });
    params.item_embeddings.row(kPaddingId).setZero();
}

std::string TrainLog::csv() const {
    std::ostringstream out;
    out << "epoch,pred_loss,bt_loss,total_loss,val_ndcg@10\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << format_real(r.pred) << ',' << format_real(r.bt) << ',' << format_real(r.total) << ','
            << format_real(r.val_ndcg10) << '\n';
    }
    return out.str();
}

std::string TrainLog::timing_csv() const {
    std::ostringstream out;
    out << "epoch,wall_seconds\n";
    for (const auto& r : rows) out << r.epoch << ',' << format_real(r.wall_seconds) << '\n';
    return out.str();
}

TrainResult train(const TrainConfig& config, const DatasetBundle& dataset, const TrainOptions& options) {
    config.validate();
    const auto n_items = static_cast<int>(dataset.num_items());
    const auto& split = dataset.split;

    std::vector<TrainingExample> rebuilt;
    if (dataset.params.max_len != config.max_len) rebuilt = build_examples(split.train, config.max_len);
    const auto& examples = dataset.params.max_len == config.max_len ? dataset.examples : rebuilt;
    if (examples.empty()) throw TrainingError("dataset has no training examples");
    if (make_queries(split, config.max_len, HoldoutTarget::Validation).queries.empty()) {
        throw TrainingError("dataset has no validation users");
    }

    // Views for the BT branch: the prefix itself, or prefix + target.
    std::vector<std::vector<ItemId>> shifted;
    if (config.pair_views_include_target) {
        shifted.reserve(examples.size());
        for (const auto& ex : examples) {
            std::vector<ItemId> v(ex.prefix.begin() + 1, ex.prefix.end());
            v.push_back(ex.target);
            shifted.push_back(std::move(v));
        }
    }
    auto view_of = [&](std::size_t i) -> std::span<const ItemId> {
        return config.pair_views_include_target ? std::span<const ItemId>(shifted[i])
                                                : std::span<const ItemId>(examples[i].prefix);
    };

    TrainResult result;
    Model model = make_model(config.encoder(n_items), config.seed);
    const auto index = build_index(examples);

    ObjectiveSettings obj;
    obj.loss = config.loss;
    obj.alpha = config.alpha;
    obj.lambda = config.lambda;
    obj.bt_active = !options.disable_bt && (config.alpha > 0.0 || options.force_bt_path);
    obj.correlation.row_normalize = config.bt_row_normalize;

    AdamSettings adam{config.lr, 0.9, 0.999, 1e-8, config.weight_decay};
    AdamState state;
    Parameters grads = model.params.zeros_like();

    const auto n_examples = examples.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);
    std::vector<std::size_t> order(n_examples);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = make_rng({config.seed, key(Stream::Shuffle), static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        std::vector<std::pair<std::size_t, std::size_t>> batches;
        for (std::size_t lo = 0; lo < n_examples; lo += bs) batches.emplace_back(lo, std::min(n_examples, lo + bs));
        // A trailing singleton batch cannot form a correlation matrix; fold it into its predecessor.
        if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
            batches[batches.size() - 2].second = batches.back().second;
            batches.pop_back();
        }

        double sum_pred = 0.0, sum_bt = 0.0, sum_total = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto [lo, hi] = batches[bi];
            if (hi == lo) {
                log::warn("skipping empty batch");
                continue;
            }
            const auto ep = static_cast<std::uint64_t>(epoch);
            auto neg_rng = make_rng({config.seed, key(Stream::Negatives), ep, bi});
            auto pair_rng = make_rng({config.seed, key(Stream::Pairing), ep, bi});

            BatchInputs batch;
            batch.sce_k = config.sce_k;
            batch.dropout = DropoutContext{config.seed, ep, bi, 0};
            for (std::size_t k = lo; k < hi; ++k) {
                const auto& ex = examples[order[k]];
                batch.anchors.emplace_back(ex.prefix);
                batch.targets.push_back(ex.target);
                if (config.loss == LossKind::Bce) {
                    batch.negatives.push_back(sample_negatives(ex.prefix, ex.target, n_items, config.bce_m, neg_rng));
                }
            }
            if (config.loss == LossKind::Sce) {
                batch.candidate_pool = sample_candidate_pool(n_items, std::min(config.sce_k, n_items - 1), neg_rng);
                batch.sce_k = std::min(config.sce_k, n_items - 1);
            }
            if (obj.bt_active) {
                for (std::size_t k = lo; k < hi; ++k) {
                    batch.partners.push_back(view_of(sample_pair(index, order[k], pair_rng)));
                    if (config.pair_views_include_target) batch.bt_anchors.push_back(view_of(order[k]));
                }
            }

            LossBundle lb;
            try {
                lb = batch_objective(model, obj, batch, &grads, options.threads);
            } catch (const NumericalError& e) {
                throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(bi));
            }

            if (!std::isfinite(lb.total)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(bi));
            }
            adam_step(model.params, grads, state, adam);
            if (!model.params.all_finite()) {
                throw TrainingError("non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(bi));
            }
            if (options.record_steps) result.steps.push_back(lb);
            sum_pred += lb.pred;
            sum_bt += lb.bt;
            sum_total += lb.total;
            ++n_batches;
        }

        TrainLogRow row;
        row.epoch = epoch;
        const double denom = n_batches > 0 ? static_cast<double>(n_batches) : 1.0;
        row.pred = sum_pred / denom;
        row.bt = sum_bt / denom;
        row.total = sum_total / denom;
        row.val_ndcg10 = validation_ndcg(model, split, 10, options.threads);
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.rows.push_back(row);
        if (options.on_epoch) options.on_epoch(row);

        if (epoch == 1 || row.val_ndcg10 > result.best_val_ndcg10) {
            result.best_val_ndcg10 = row.val_ndcg10;
            result.best_epoch = epoch;
            result.best = model;
        }
    }
    result.last = std::move(model);
    return result;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(LossKind loss, const GradcheckSettings& gs) {
    EncoderConfig cfg;
    cfg.num_items = gs.num_items;
    cfg.dim = gs.dim;
    cfg.layers = gs.layers;
    cfg.heads = gs.heads;
    cfg.max_len = gs.max_len;
    cfg.dropout = gs.dropout;
    Model model = make_model(cfg, gs.seed);

    auto rng = make_rng({gs.seed, key(Stream::Gradcheck)});
    // Move away from the symmetric initial point (unit gains, zero biases).
    std::normal_distribution<double> jitter(0.0, 0.1);
    model.params.for_each([&](const std::string&, Matrix& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) += jitter(rng);
    });
    model.params.item_embeddings.row(kPaddingId).setZero();

    std::uniform_int_distribution<int> item(1, gs.num_items);
    std::uniform_int_distribution<int> length(1, gs.max_len);
    auto random_prefix = [&] {
        std::vector<ItemId> p(static_cast<std::size_t>(gs.max_len), kPaddingId);
        const int len = length(rng);
        for (int k = gs.max_len - len; k < gs.max_len; ++k) p[static_cast<std::size_t>(k)] = item(rng);
        return p;
    };
    std::vector<std::vector<ItemId>> anchors, partners;
    BatchInputs batch;
    for (int b = 0; b < gs.batch; ++b) {
        anchors.push_back(random_prefix());
        partners.push_back(random_prefix());
        batch.targets.push_back(item(rng));
    }
    for (int b = 0; b < gs.batch; ++b) {
        batch.anchors.emplace_back(anchors[static_cast<std::size_t>(b)]);
        batch.partners.emplace_back(partners[static_cast<std::size_t>(b)]);
        if (loss == LossKind::Bce) {
            batch.negatives.push_back(sample_negatives(anchors[static_cast<std::size_t>(b)],
                                                       batch.targets[static_cast<std::size_t>(b)], gs.num_items,
                                                       gs.bce_m, rng));
        }
    }
    if (loss == LossKind::Sce) batch.candidate_pool = sample_candidate_pool(gs.num_items, gs.sce_k, rng);
    batch.sce_k = gs.sce_k;
    if (gs.dropout > 0.0) batch.dropout = DropoutContext{gs.seed, 1, 1, 0};

    ObjectiveSettings s;
    s.loss = loss;
    s.alpha = gs.alpha;
    s.lambda = gs.lambda;
    s.bt_active = gs.alpha > 0.0;
    if (!s.bt_active) batch.partners.clear();

    Parameters analytic = model.params.zeros_like();
    batch_objective(model, s, batch, &analytic);

    GradcheckReport rep;
    rep.loss = loss;
    rep.alpha = gs.alpha;
    rep.step = gs.step;
    rep.tolerance = gs.tolerance;

    std::vector<const Matrix*> grads;
    analytic.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
    std::size_t t = 0;
    model.params.for_each([&](const std::string& name, Matrix& p) {
        TensorCheck tc;
        tc.name = name;
        const Matrix& g = *grads[t++];
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                const double orig = p(r, c);
                p(r, c) = orig + gs.step;
                const double up = batch_objective(model, s, batch, nullptr).total;
                p(r, c) = orig - gs.step;
                const double down = batch_objective(model, s, batch, nullptr).total;
                p(r, c) = orig;
                const double numeric = (up - down) / (2.0 * gs.step);
                tc.max_rel_error = std::max(tc.max_rel_error, relative_error(g(r, c), numeric, gs.rel_floor));
                tc.max_abs_error = std::max(tc.max_abs_error, std::abs(g(r, c) - numeric));
                ++tc.entries;
            }
        }
        rep.max_rel_error = std::max(rep.max_rel_error, tc.max_rel_error);
        rep.tensors.push_back(std::move(tc));
    });
    rep.passed = rep.max_rel_error <= gs.tolerance;
    return rep;
}

}  // namespace btsr
