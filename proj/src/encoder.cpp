#include "btsr/encoder.hpp"

#include <cmath>
#include <numbers>

#include "btsr/errors.hpp"
#include "btsr/rng.hpp"

namespace btsr {

namespace {

Matrix row_vector(int k, double value) { return Matrix::Constant(1, k, value); }

void require_finite(const Matrix& m, const std::string& name) {
    if (!m.allFinite()) throw NumericalError(name);
}

LayerNormCache layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, Matrix& out) {
    LayerNormCache c;
    const auto d = static_cast<double>(x.cols());
    c.xhat.resize(x.rows(), x.cols());
    c.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / d;
        const double var = (x.row(r).array() - mean).square().sum() / d;
        c.rstd[r] = 1.0 / std::sqrt(var + eps);
        c.xhat.row(r) = (x.row(r).array() - mean) * c.rstd[r];
    }
    out = (c.xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
    return c;
}

Matrix layer_norm_backward(const LayerNormCache& c, const Matrix& gain, const Matrix& dy, Matrix& dgain,
                           Matrix& dbias) {
    dgain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    dbias.row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
    const auto d = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(c.xhat.row(r)) / d;
        dx.row(r) = c.rstd[r] * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

// Inverted-dropout mask (entries 0 or 1/(1-p)) keyed by absolute sequence slot.
Matrix dropout_mask(const DropoutContext& ctx, double rate, std::uint64_t site, int first_slot, Eigen::Index rows,
                    Eigen::Index cols) {
    const double keep = 1.0 - rate;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto slot = static_cast<std::uint64_t>(first_slot + r);
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double u = counter_uniform({ctx.seed, key(Stream::Dropout), ctx.epoch, ctx.batch, ctx.slot, site,
                                              slot, static_cast<std::uint64_t>(c)});
            m(r, c) = u < keep ? 1.0 / keep : 0.0;
        }
    }
    return m;
}

std::string block_name(std::size_t l, const char* what) { return "block" + std::to_string(l) + "." + what; }

void add_scaled_matrix(Matrix& dst, const Matrix& src, double scale) { dst += scale * src; }

}  // namespace

void EncoderConfig::validate() const {
    if (num_items < 1) throw ConfigError("num_items must be >= 1");
    if (dim < 1 || layers < 0 || heads < 1) throw ConfigError("dim, layers, heads must be positive");
    if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
    if (max_len < 2) throw ConfigError("max_len must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

void Parameters::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("item_embeddings", item_embeddings);
    fn("positional", positional);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        auto& b = blocks[l];
        fn(block_name(l, "ln1_gain"), b.ln1_gain);
        fn(block_name(l, "ln1_bias"), b.ln1_bias);
        fn(block_name(l, "wq"), b.wq);
        fn(block_name(l, "bq"), b.bq);
        fn(block_name(l, "wk"), b.wk);
        fn(block_name(l, "bk"), b.bk);
        fn(block_name(l, "wv"), b.wv);
        fn(block_name(l, "bv"), b.bv);
        fn(block_name(l, "wo"), b.wo);
        fn(block_name(l, "bo"), b.bo);
        fn(block_name(l, "ln2_gain"), b.ln2_gain);
        fn(block_name(l, "ln2_bias"), b.ln2_bias);
        fn(block_name(l, "w1"), b.w1);
        fn(block_name(l, "b1"), b.b1);
        fn(block_name(l, "w2"), b.w2);
        fn(block_name(l, "b2"), b.b2);
    }
    fn("final_gain", final_gain);
    fn("final_bias", final_bias);
}

void Parameters::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<Parameters*>(this)->for_each([&](const std::string& name, Matrix& m) { fn(name, m); });
}

Parameters Parameters::zeros_like() const {
    Parameters z = *this;
    z.set_zero();
    return z;
}

void Parameters::set_zero() {
    for_each([](const std::string&, Matrix& m) { m.setZero(); });
}

void Parameters::add_scaled(const Parameters& other, double scale) {
    std::vector<const Matrix*> src;
    other.for_each([&](const std::string&, const Matrix& m) { src.push_back(&m); });
    std::size_t k = 0;
    for_each([&](const std::string&, Matrix& m) { add_scaled_matrix(m, *src[k++], scale); });
}

bool Parameters::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
}

std::size_t Parameters::size() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

Parameters init_parameters(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto rng = make_rng({seed, key(Stream::Init)});
    const int d = cfg.dim;
    const int h = cfg.hidden();

    auto normal = [&](int rows, int cols, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        Matrix m(rows, cols);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
        return m;
    };
    auto xavier = [&](int fan_in, int fan_out) {
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        Matrix m(fan_in, fan_out);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
        return m;
    };

    Parameters p;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    p.item_embeddings = normal(cfg.num_items + 1, d, emb_std);
    p.item_embeddings.row(0).setZero();
    p.positional = normal(cfg.max_len, d, emb_std);
    for (int l = 0; l < cfg.layers; ++l) {
        BlockParameters b;
        b.ln1_gain = row_vector(d, 1.0);
        b.ln1_bias = row_vector(d, 0.0);
        b.wq = xavier(d, d);
        b.bq = row_vector(d, 0.0);
        b.wk = xavier(d, d);
        b.bk = row_vector(d, 0.0);
        b.wv = xavier(d, d);
        b.bv = row_vector(d, 0.0);
        b.wo = xavier(d, d);
        b.bo = row_vector(d, 0.0);
        b.ln2_gain = row_vector(d, 1.0);
        b.ln2_bias = row_vector(d, 0.0);
        b.w1 = xavier(d, h);
        b.b1 = row_vector(h, 0.0);
        b.w2 = xavier(h, d);
        b.b2 = row_vector(d, 0.0);
        p.blocks.push_back(std::move(b));
    }
    p.final_gain = row_vector(d, 1.0);
    p.final_bias = row_vector(d, 0.0);
    return p;
}

Model make_model(const EncoderConfig& config, std::uint64_t seed) { return Model{config, init_parameters(config, seed)}; }

ForwardTrace forward(const Model& model, std::span<const ItemId> prefix, const DropoutContext* dropout) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    const int n = cfg.max_len;
    if (prefix.size() > static_cast<std::size_t>(n)) {
        throw InvalidInputError("prefix longer than max_len " + std::to_string(n));
    }

    ForwardTrace tr;
    const int pad = n - static_cast<int>(prefix.size());
    int first = -1;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const ItemId id = prefix[i];
        if (id < 0 || id > cfg.num_items) {
            throw IndexError("item id " + std::to_string(id) + " outside [0, " + std::to_string(cfg.num_items) + "]");
        }
        if (id != kPaddingId && first < 0) first = static_cast<int>(i);
    }
    if (first < 0) throw InvalidInputError("prefix contains only padding");
    // Padding may only appear on the left.
    for (std::size_t i = static_cast<std::size_t>(first); i < prefix.size(); ++i) {
        if (prefix[i] == kPaddingId) throw InvalidInputError("padding inside the prefix");
    }
    tr.tokens.assign(prefix.begin() + first, prefix.end());
    tr.first_slot = pad + first;

    const auto T = static_cast<Eigen::Index>(tr.tokens.size());
    const int d = cfg.dim;
    const bool train = dropout != nullptr && cfg.dropout > 0.0;

    Matrix x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        x.row(t) = p.item_embeddings.row(tr.tokens[t]) + p.positional.row(tr.first_slot + t);
    }
    if (train) {
        tr.embed_mask = dropout_mask(*dropout, cfg.dropout, 0, tr.first_slot, T, d);
        x.array() *= tr.embed_mask.array();
    }

    const int heads = cfg.heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    tr.blocks.resize(p.blocks.size());
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const auto& b = p.blocks[l];
        auto& bt = tr.blocks[l];
        bt.input = x;
        bt.ln1 = layer_norm(x, b.ln1_gain, b.ln1_bias, cfg.layer_norm_eps, bt.attn_in);
        bt.q = affine(bt.attn_in, b.wq, b.bq);
        bt.k = affine(bt.attn_in, b.wk, b.bk);
        bt.v = affine(bt.attn_in, b.wv, b.bv);
        bt.context.resize(T, d);
        bt.probs.resize(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const auto qh = bt.q.middleCols(h * dh, dh);
            const auto kh = bt.k.middleCols(h * dh, dh);
            const auto vh = bt.v.middleCols(h * dh, dh);
            Matrix s = (qh * kh.transpose()) * scale;
            Matrix& prob = bt.probs[static_cast<std::size_t>(h)];
            prob.setZero(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                const double mx = s.row(i).head(i + 1).maxCoeff();
                double sum = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    prob(i, j) = std::exp(s(i, j) - mx);
                    sum += prob(i, j);
                }
                prob.row(i).head(i + 1) /= sum;
            }
            bt.context.middleCols(h * dh, dh) = prob * vh;
        }
        Matrix attn = affine(bt.context, b.wo, b.bo);
        if (train) {
            bt.attn_mask = dropout_mask(*dropout, cfg.dropout, 1 + 2 * l, tr.first_slot, T, d);
            attn.array() *= bt.attn_mask.array();
        }
        bt.mid = x + attn;
        bt.ln2 = layer_norm(bt.mid, b.ln2_gain, b.ln2_bias, cfg.layer_norm_eps, bt.ffn_in);
        bt.pre_act = affine(bt.ffn_in, b.w1, b.b1);
        bt.act = bt.pre_act.unaryExpr([](double v) { return gelu(v); });
        Matrix ffn = affine(bt.act, b.w2, b.b2);
        if (train) {
            bt.ffn_mask = dropout_mask(*dropout, cfg.dropout, 2 + 2 * l, tr.first_slot, T, d);
            ffn.array() *= bt.ffn_mask.array();
        }
        x = bt.mid + ffn;
        require_finite(x, block_name(l, "output"));
    }

    tr.last_hidden = x.bottomRows(1);
    Matrix out;
    tr.final_ln = layer_norm(tr.last_hidden, p.final_gain, p.final_bias, cfg.layer_norm_eps, out);
    tr.output = out.row(0).transpose();
    require_finite(tr.output, "sequence embedding");
    return tr;
}

Vector encode(const Model& model, std::span<const ItemId> prefix, const DropoutContext* dropout) {
    return forward(model, prefix, dropout).output;
}

Matrix hidden_states(const Model& model, std::span<const ItemId> prefix) {
    auto tr = forward(model, prefix);
    if (tr.blocks.empty()) return Matrix();
    const auto& last = tr.blocks.back();
    const auto& b = model.params.blocks.back();
    return last.mid + affine(last.act, b.w2, b.b2);
}

void backward(const Model& model, const ForwardTrace& tr, const Vector& dz, Parameters& g) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    if (!dz.allFinite()) throw NumericalError("gradient of sequence embedding");

    const auto T = static_cast<Eigen::Index>(tr.tokens.size());
    const int d = cfg.dim;
    const int heads = cfg.heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix dx = Matrix::Zero(T, d);
    dx.bottomRows(1) = layer_norm_backward(tr.final_ln, p.final_gain, dz.transpose(), g.final_gain, g.final_bias);

    for (std::size_t li = p.blocks.size(); li-- > 0;) {
        const auto& b = p.blocks[li];
        const auto& bt = tr.blocks[li];
        auto& gb = g.blocks[li];

        // Feed-forward branch.
        Matrix dffn = dx;
        if (bt.ffn_mask.size() > 0) dffn.array() *= bt.ffn_mask.array();
        gb.w2 += bt.act.transpose() * dffn;
        gb.b2.row(0) += dffn.colwise().sum();
        Matrix dpre = (dffn * b.w2.transpose()).array() * bt.pre_act.unaryExpr([](double v) { return gelu_grad(v); }).array();
        gb.w1 += bt.ffn_in.transpose() * dpre;
        gb.b1.row(0) += dpre.colwise().sum();
        Matrix dffn_in = dpre * b.w1.transpose();
        Matrix dmid = dx + layer_norm_backward(bt.ln2, b.ln2_gain, dffn_in, gb.ln2_gain, gb.ln2_bias);

        // Attention branch.
        Matrix dattn = dmid;
        if (bt.attn_mask.size() > 0) dattn.array() *= bt.attn_mask.array();
        gb.wo += bt.context.transpose() * dattn;
        gb.bo.row(0) += dattn.colwise().sum();
        Matrix dctx = dattn * b.wo.transpose();

        Matrix dq(T, d), dk(T, d), dv(T, d);
        for (int h = 0; h < heads; ++h) {
            const Matrix& prob = bt.probs[static_cast<std::size_t>(h)];
            const auto qh = bt.q.middleCols(h * dh, dh);
            const auto kh = bt.k.middleCols(h * dh, dh);
            const auto vh = bt.v.middleCols(h * dh, dh);
            const auto dctx_h = dctx.middleCols(h * dh, dh);
            Matrix dprob = dctx_h * vh.transpose();
            dv.middleCols(h * dh, dh) = prob.transpose() * dctx_h;
            Matrix ds(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                const double inner = prob.row(i).dot(dprob.row(i));
                ds.row(i) = prob.row(i).array() * (dprob.row(i).array() - inner);
            }
            ds *= scale;
            dq.middleCols(h * dh, dh) = ds * kh;
            dk.middleCols(h * dh, dh) = ds.transpose() * qh;
        }
        gb.wq += bt.attn_in.transpose() * dq;
        gb.bq.row(0) += dq.colwise().sum();
        gb.wk += bt.attn_in.transpose() * dk;
        gb.bk.row(0) += dk.colwise().sum();
        gb.wv += bt.attn_in.transpose() * dv;
        gb.bv.row(0) += dv.colwise().sum();
        Matrix dattn_in = dq * b.wq.transpose() + dk * b.wk.transpose() + dv * b.wv.transpose();
        dx = dmid + layer_norm_backward(bt.ln1, b.ln1_gain, dattn_in, gb.ln1_gain, gb.ln1_bias);
        if (!dx.allFinite()) throw NumericalError(block_name(li, "input gradient"));
    }

    if (tr.embed_mask.size() > 0) dx.array() *= tr.embed_mask.array();
    for (Eigen::Index t = 0; t < T; ++t) {
        g.item_embeddings.row(tr.tokens[t]) += dx.row(t);
        g.positional.row(tr.first_slot + t) += dx.row(t);
    }
    g.item_embeddings.row(kPaddingId).setZero();
}

Vector score_all(const Model& model, const Vector& z) {
    const auto& e = model.params.item_embeddings;
    return e.bottomRows(e.rows() - 1) * z;
}

}  // namespace btsr
