#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ipp/corpus.hpp"
#include "ipp/errors.hpp"
#include "ipp/rng.hpp"
#include "ipp/sha256.hpp"

namespace ipp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Self-attention next-item model in the SASRec mold: learned item and
// positional embeddings, pre-norm causal attention blocks with pointwise
// feed-forward layers, and a full-vocabulary softmax that shares the item
// embedding matrix as output projection. Training is plain backprop written
// out by hand; no autograd framework.

struct SimulatorConfig {
    int embed_dim = 64;
    int num_blocks = 2;
    int num_heads = 1;
    int max_seq_len = 200;
    double dropout = 0.2;
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 128;
    std::uint64_t seed = 42;

    void validate() const {
        if (embed_dim <= 0 || num_blocks <= 0 || num_heads <= 0 || max_seq_len <= 0 ||
            epochs <= 0 || batch_size <= 0)
            throw ConfigError("simulator config: dimensions, epochs and batch size must be positive");
        if (embed_dim % num_heads != 0)
            throw ConfigError("simulator config: embed_dim must be divisible by num_heads");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw ConfigError("simulator config: dropout must lie in [0,1)");
        if (!(learning_rate > 0.0))
            throw ConfigError("simulator config: learning_rate must be positive");
    }

    json to_json() const {
        return json{{"embed_dim", embed_dim},   {"num_blocks", num_blocks},
                    {"num_heads", num_heads},   {"max_seq_len", max_seq_len},
                    {"dropout", dropout},       {"learning_rate", learning_rate},
                    {"epochs", epochs},         {"batch_size", batch_size},
                    {"seed", seed}};
    }

    static SimulatorConfig from_json(const json& j) {
        SimulatorConfig c;
        c.embed_dim = j.at("embed_dim").get<int>();
        c.num_blocks = j.at("num_blocks").get<int>();
        c.num_heads = j.at("num_heads").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.epochs = j.at("epochs").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

struct AttentionBlock {
    MatrixXd wq, wk, wv, wo;   // d x d
    VectorXd bq, bk, bv, bo;   // d
    MatrixXd w1, w2;           // d x d pointwise feed-forward
    VectorXd b1, b2;
    VectorXd ln1_g, ln1_b, ln2_g, ln2_b;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double hit_at_10 = 0.0;
    double wall_seconds = 0.0;
};

class SimulatorModel {
public:
    SimulatorConfig config;
    std::vector<ItemId> item_ids;  // sorted; row i of item_emb belongs to item_ids[i]
    MatrixXd item_emb;             // |I| x d
    MatrixXd pos_emb;              // max_seq_len x d
    std::vector<AttentionBlock> blocks;
    VectorXd lnf_g, lnf_b;
    std::string train_fingerprint;

    int vocab() const { return static_cast<int>(item_ids.size()); }

    int dense_index(ItemId id) const {
        auto it = index_.find(id);
        if (it == index_.end())
            throw DomainError("item id " + std::to_string(id) + " unknown to the simulator");
        return it->second;
    }

    bool knows(ItemId id) const { return index_.count(id) != 0; }

    void rebuild_index() {
        index_.clear();
        index_.reserve(item_ids.size());
        for (std::size_t i = 0; i < item_ids.size(); ++i)
            index_[item_ids[i]] = static_cast<int>(i);
    }

    /// Logits over the full vocabulary after consuming `seq` (most recent
    /// max_seq_len items when longer).
    VectorXd final_logits(std::span<const ItemId> seq) const;

    /// Softmax of final_logits; entries sum to 1 within 1e-6.
    std::vector<double> next_item_dist(std::span<const ItemId> seq) const;

    /// log P(item | seq), computed in log space from the logits.
    double log_prob(ItemId item, std::span<const ItemId> seq) const;

    /// 1-based rank of `item` in the next-item distribution; rank 1 is the
    /// most probable item, ties broken by ascending item id.
    int rank_of(ItemId item, std::span<const ItemId> seq) const;

    VectorXd item_embedding(ItemId id) const {
        return item_emb.row(dense_index(id)).transpose();
    }

    /// SHA-256 over all parameter tensors; equal fingerprints mean
    /// bit-identical models.
    std::string params_sha256() const;

    void save(const std::filesystem::path& path) const;
    static SimulatorModel load(const std::filesystem::path& path);

private:
    std::unordered_map<ItemId, int> index_;
};

namespace simdetail {

inline void xavier_init(MatrixXd& m, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = uniform_real(rng, -bound, bound);
}

struct BlockCache {
    MatrixXd ln1_xhat, a_in;     // T x d
    VectorXd ln1_ivar;           // per position
    MatrixXd q, k, v;            // T x d
    std::vector<MatrixXd> probs; // per head, T x T attention weights
    MatrixXd attn_concat;        // T x d
    MatrixXd attn_drop_mask;     // empty unless dropout active
    MatrixXd x_attn;             // after residual
    MatrixXd ln2_xhat, f_in;
    VectorXd ln2_ivar;
    MatrixXd h1;                 // pre-ReLU
    MatrixXd ffn_drop_mask;
    MatrixXd x_ffn;              // after residual
};

struct ForwardCache {
    std::vector<int> idx;        // dense item indices
    MatrixXd x0;                 // embeddings + positions (post input dropout)
    MatrixXd input_drop_mask;
    std::vector<BlockCache> blocks;
    MatrixXd lnf_xhat;
    VectorXd lnf_ivar;
    MatrixXd hidden;             // T x d final representation
};

// y = gamma .* (x - mu) / sqrt(var + eps) + beta, rowwise.
inline constexpr double kLnEps = 1e-8;

inline void layer_norm_forward(const MatrixXd& x, const VectorXd& gamma, const VectorXd& beta,
                               MatrixXd& xhat, VectorXd& ivar, MatrixXd& out) {
    const auto T = x.rows(), d = x.cols();
    xhat.resize(T, d);
    out.resize(T, d);
    ivar.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        double mu = x.row(t).mean();
        double var = (x.row(t).array() - mu).square().mean();
        double iv = 1.0 / std::sqrt(var + kLnEps);
        ivar(t) = iv;
        xhat.row(t) = (x.row(t).array() - mu) * iv;
        out.row(t) = xhat.row(t).cwiseProduct(gamma.transpose()) + beta.transpose();
    }
}

inline void layer_norm_backward(const MatrixXd& dy, const MatrixXd& xhat, const VectorXd& ivar,
                                const VectorXd& gamma, MatrixXd& dx, VectorXd& dgamma,
                                VectorXd& dbeta) {
    const auto T = dy.rows(), d = dy.cols();
    dx.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        dgamma += dy.row(t).cwiseProduct(xhat.row(t)).transpose();
        dbeta += dy.row(t).transpose();
        Eigen::RowVectorXd dxhat = dy.row(t).cwiseProduct(gamma.transpose());
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(xhat.row(t)).mean();
        dx.row(t) = ivar(t) * (dxhat.array() - m1 - xhat.row(t).array() * m2);
    }
    (void)d;
}

}  // namespace simdetail

// Gradients mirror the parameter layout one-to-one.
struct SimulatorGradients {
    MatrixXd item_emb, pos_emb;
    std::vector<AttentionBlock> blocks;
    VectorXd lnf_g, lnf_b;

    static SimulatorGradients zeros_like(const SimulatorModel& m) {
        SimulatorGradients g;
        g.item_emb = MatrixXd::Zero(m.item_emb.rows(), m.item_emb.cols());
        g.pos_emb = MatrixXd::Zero(m.pos_emb.rows(), m.pos_emb.cols());
        g.lnf_g = VectorXd::Zero(m.lnf_g.size());
        g.lnf_b = VectorXd::Zero(m.lnf_b.size());
        for (const auto& b : m.blocks) {
            AttentionBlock z;
            z.wq = MatrixXd::Zero(b.wq.rows(), b.wq.cols());
            z.wk = MatrixXd::Zero(b.wk.rows(), b.wk.cols());
            z.wv = MatrixXd::Zero(b.wv.rows(), b.wv.cols());
            z.wo = MatrixXd::Zero(b.wo.rows(), b.wo.cols());
            z.bq = VectorXd::Zero(b.bq.size());
            z.bk = VectorXd::Zero(b.bk.size());
            z.bv = VectorXd::Zero(b.bv.size());
            z.bo = VectorXd::Zero(b.bo.size());
            z.w1 = MatrixXd::Zero(b.w1.rows(), b.w1.cols());
            z.w2 = MatrixXd::Zero(b.w2.rows(), b.w2.cols());
            z.b1 = VectorXd::Zero(b.b1.size());
            z.b2 = VectorXd::Zero(b.b2.size());
            z.ln1_g = VectorXd::Zero(b.ln1_g.size());
            z.ln1_b = VectorXd::Zero(b.ln1_b.size());
            z.ln2_g = VectorXd::Zero(b.ln2_g.size());
            z.ln2_b = VectorXd::Zero(b.ln2_b.size());
            g.blocks.push_back(std::move(z));
        }
        return g;
    }
};

namespace simdetail {

// Applies fn to every parameter tensor, model and companion structure in
// lockstep; the flatten/FD/Adam machinery below is built on it.
template <typename Model, typename Fn>
void for_each_tensor(Model& m, Fn&& fn) {
    fn(m.item_emb);
    fn(m.pos_emb);
    for (auto& b : m.blocks) {
        fn(b.wq); fn(b.bq);
        fn(b.wk); fn(b.bk);
        fn(b.wv); fn(b.bv);
        fn(b.wo); fn(b.bo);
        fn(b.ln1_g); fn(b.ln1_b);
        fn(b.w1); fn(b.b1);
        fn(b.w2); fn(b.b2);
        fn(b.ln2_g); fn(b.ln2_b);
    }
    fn(m.lnf_g);
    fn(m.lnf_b);
}

template <typename A, typename B, typename Fn>
void for_each_tensor_pair(A& a, B& b, Fn&& fn) {
    std::vector<MatrixXd*> am, bm;
    std::vector<VectorXd*> av, bv;
    for_each_tensor(a, [&](auto& t) {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, MatrixXd>) am.push_back(&t);
        else av.push_back(&t);
    });
    for_each_tensor(b, [&](auto& t) {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, MatrixXd>) bm.push_back(&t);
        else bv.push_back(&t);
    });
    for (std::size_t i = 0; i < am.size(); ++i) fn(*am[i], *bm[i]);
    for (std::size_t i = 0; i < av.size(); ++i) fn(*av[i], *bv[i]);
}

}  // namespace simdetail

inline std::vector<double> flatten_params(const SimulatorModel& m) {
    std::vector<double> out;
    simdetail::for_each_tensor(const_cast<SimulatorModel&>(m), [&](auto& t) {
        out.insert(out.end(), t.data(), t.data() + t.size());
    });
    return out;
}

inline void unflatten_params(SimulatorModel& m, const std::vector<double>& v) {
    std::size_t pos = 0;
    simdetail::for_each_tensor(m, [&](auto& t) {
        std::copy(v.begin() + pos, v.begin() + pos + t.size(), t.data());
        pos += t.size();
    });
    if (pos != v.size()) throw DomainError("parameter vector length mismatch");
}

inline std::vector<double> flatten_grads(const SimulatorGradients& g) {
    std::vector<double> out;
    simdetail::for_each_tensor(const_cast<SimulatorGradients&>(g), [&](auto& t) {
        out.insert(out.end(), t.data(), t.data() + t.size());
    });
    return out;
}

// Forward pass over one (possibly truncated) item-index sequence. When
// `drop_rng` is non-null, inverted dropout with rate config.dropout is
// applied at the usual SASRec spots.
inline void simulator_forward(const SimulatorModel& m, const std::vector<int>& idx,
                              std::mt19937_64* drop_rng, simdetail::ForwardCache& fc) {
    const int T = static_cast<int>(idx.size());
    const int d = m.config.embed_dim;
    const int heads = m.config.num_heads;
    const int dh = d / heads;
    const double keep = 1.0 - m.config.dropout;
    const bool dropping = drop_rng != nullptr && m.config.dropout > 0.0;

    fc.idx = idx;
    fc.blocks.assign(m.blocks.size(), {});

    // right-aligned positions: the most recent item always occupies the last
    // positional row, matching how truncated windows are consumed at inference
    const int pos_offset = m.config.max_seq_len - T;
    MatrixXd x(T, d);
    for (int t = 0; t < T; ++t)
        x.row(t) = m.item_emb.row(idx[t]) + m.pos_emb.row(pos_offset + t);
    if (dropping) {
        fc.input_drop_mask.resize(T, d);
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < d; ++j)
                fc.input_drop_mask(t, j) = uniform_real(*drop_rng) < keep ? 1.0 / keep : 0.0;
        x = x.cwiseProduct(fc.input_drop_mask);
    } else {
        fc.input_drop_mask.resize(0, 0);
    }
    fc.x0 = x;

    for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
        const auto& b = m.blocks[bi];
        auto& c = fc.blocks[bi];

        simdetail::layer_norm_forward(x, b.ln1_g, b.ln1_b, c.ln1_xhat, c.ln1_ivar, c.a_in);
        c.q = (c.a_in * b.wq).rowwise() + b.bq.transpose();
        c.k = (c.a_in * b.wk).rowwise() + b.bk.transpose();
        c.v = (c.a_in * b.wv).rowwise() + b.bv.transpose();

        c.probs.assign(heads, MatrixXd());
        c.attn_concat.resize(T, d);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < heads; ++h) {
            auto qh = c.q.middleCols(h * dh, dh);
            auto kh = c.k.middleCols(h * dh, dh);
            auto vh = c.v.middleCols(h * dh, dh);
            MatrixXd scores = qh * kh.transpose() * scale;
            MatrixXd& p = c.probs[h];
            p.resize(T, T);
            for (int i = 0; i < T; ++i) {
                // causal: position i attends to 0..i
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j));
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    p(i, j) = std::exp(scores(i, j) - mx);
                    sum += p(i, j);
                }
                for (int j = 0; j <= i; ++j) p(i, j) /= sum;
                for (int j = i + 1; j < T; ++j) p(i, j) = 0.0;
            }
            c.attn_concat.middleCols(h * dh, dh) = p * vh;
        }
        MatrixXd attn_out = (c.attn_concat * b.wo).rowwise() + b.bo.transpose();
        if (dropping) {
            c.attn_drop_mask.resize(T, d);
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < d; ++j)
                    c.attn_drop_mask(t, j) = uniform_real(*drop_rng) < keep ? 1.0 / keep : 0.0;
            attn_out = attn_out.cwiseProduct(c.attn_drop_mask);
        }
        c.x_attn = x + attn_out;

        simdetail::layer_norm_forward(c.x_attn, b.ln2_g, b.ln2_b, c.ln2_xhat, c.ln2_ivar, c.f_in);
        c.h1 = (c.f_in * b.w1).rowwise() + b.b1.transpose();
        MatrixXd h1r = c.h1.cwiseMax(0.0);
        MatrixXd ffn_out = (h1r * b.w2).rowwise() + b.b2.transpose();
        if (dropping) {
            c.ffn_drop_mask.resize(T, d);
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < d; ++j)
                    c.ffn_drop_mask(t, j) = uniform_real(*drop_rng) < keep ? 1.0 / keep : 0.0;
            ffn_out = ffn_out.cwiseProduct(c.ffn_drop_mask);
        }
        c.x_ffn = c.x_attn + ffn_out;
        x = c.x_ffn;
    }

    simdetail::layer_norm_forward(x, m.lnf_g, m.lnf_b, fc.lnf_xhat, fc.lnf_ivar, fc.hidden);
}

// Cross-entropy over every position of one training sequence; accumulates
// parameter gradients (scaled by `weight`) into `grads` when non-null.
// Returns the summed position losses and the number of positions.
inline std::pair<double, int> simulator_seq_loss(const SimulatorModel& m,
                                                 const std::vector<int>& inputs,
                                                 const std::vector<int>& labels,
                                                 std::mt19937_64* drop_rng,
                                                 SimulatorGradients* grads, double weight) {
    simdetail::ForwardCache fc;
    simulator_forward(m, inputs, drop_rng, fc);
    const int T = static_cast<int>(inputs.size());
    const int d = m.config.embed_dim;
    const int heads = m.config.num_heads;
    const int dh = d / heads;

    MatrixXd logits = fc.hidden * m.item_emb.transpose();  // T x |I|
    double loss = 0.0;
    MatrixXd dlogits;
    if (grads) dlogits.setZero(T, m.item_emb.rows());
    for (int t = 0; t < T; ++t) {
        double mx = logits.row(t).maxCoeff();
        double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
        loss += lse - logits(t, labels[t]);
        if (grads) {
            dlogits.row(t) = ((logits.row(t).array() - lse).exp() * weight).matrix();
            dlogits(t, labels[t]) -= weight;
        }
    }
    if (!grads) return {loss, T};

    // shared item embeddings: output-projection contribution
    grads->item_emb.noalias() += dlogits.transpose() * fc.hidden;
    MatrixXd dhidden = dlogits * m.item_emb;

    MatrixXd dx;
    simdetail::layer_norm_backward(dhidden, fc.lnf_xhat, fc.lnf_ivar, m.lnf_g, dx,
                                   grads->lnf_g, grads->lnf_b);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int bi = static_cast<int>(m.blocks.size()) - 1; bi >= 0; --bi) {
        const auto& b = m.blocks[bi];
        const auto& c = fc.blocks[bi];
        auto& gb = grads->blocks[bi];

        // feed-forward branch
        MatrixXd dffn = c.ffn_drop_mask.size() ? dx.cwiseProduct(c.ffn_drop_mask) : dx;
        MatrixXd h1r = c.h1.cwiseMax(0.0);
        gb.w2.noalias() += h1r.transpose() * dffn;
        gb.b2 += dffn.colwise().sum().transpose();
        MatrixXd dh1 = (dffn * b.w2.transpose()).cwiseProduct(
            (c.h1.array() > 0.0).cast<double>().matrix());
        gb.w1.noalias() += c.f_in.transpose() * dh1;
        gb.b1 += dh1.colwise().sum().transpose();
        MatrixXd df_in = dh1 * b.w1.transpose();
        MatrixXd dx_ln2;
        simdetail::layer_norm_backward(df_in, c.ln2_xhat, c.ln2_ivar, b.ln2_g, dx_ln2,
                                       gb.ln2_g, gb.ln2_b);
        MatrixXd dx_attn = dx + dx_ln2;  // residual + normed branch

        // attention branch
        MatrixXd dattn_out =
            c.attn_drop_mask.size() ? dx_attn.cwiseProduct(c.attn_drop_mask) : dx_attn;
        gb.wo.noalias() += c.attn_concat.transpose() * dattn_out;
        gb.bo += dattn_out.colwise().sum().transpose();
        MatrixXd dconcat = dattn_out * b.wo.transpose();

        MatrixXd dq(T, d), dk(T, d), dv(T, d);
        for (int h = 0; h < heads; ++h) {
            auto kh = c.k.middleCols(h * dh, dh);
            auto qh = c.q.middleCols(h * dh, dh);
            auto vh = c.v.middleCols(h * dh, dh);
            const MatrixXd& p = c.probs[h];
            MatrixXd doh = dconcat.middleCols(h * dh, dh);
            MatrixXd dp = doh * vh.transpose();
            dv.middleCols(h * dh, dh) = p.transpose() * doh;
            MatrixXd dscores(T, T);
            for (int i = 0; i < T; ++i) {
                double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
                dscores.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
            }
            dscores *= scale;
            dq.middleCols(h * dh, dh) = dscores * kh;
            dk.middleCols(h * dh, dh) = dscores.transpose() * qh;
        }
        gb.wq.noalias() += c.a_in.transpose() * dq;
        gb.bq += dq.colwise().sum().transpose();
        gb.wk.noalias() += c.a_in.transpose() * dk;
        gb.bk += dk.colwise().sum().transpose();
        gb.wv.noalias() += c.a_in.transpose() * dv;
        gb.bv += dv.colwise().sum().transpose();
        MatrixXd da = dq * b.wq.transpose() + dk * b.wk.transpose() + dv * b.wv.transpose();
        MatrixXd dx_ln1;
        simdetail::layer_norm_backward(da, c.ln1_xhat, c.ln1_ivar, b.ln1_g, dx_ln1,
                                       gb.ln1_g, gb.ln1_b);
        dx = dx_attn + dx_ln1;
    }

    MatrixXd dx0 = fc.input_drop_mask.size() ? dx.cwiseProduct(fc.input_drop_mask) : dx;
    const int pos_offset = m.config.max_seq_len - T;
    for (int t = 0; t < T; ++t) {
        grads->item_emb.row(fc.idx[static_cast<std::size_t>(t)]) += dx0.row(t);
        grads->pos_emb.row(pos_offset + t) += dx0.row(t);
    }
    return {loss, T};
}

struct TrainingSample {
    std::vector<int> inputs;
    std::vector<int> labels;
};

// Mean cross-entropy of a batch (no dropout, no parameter updates). This is
// the function the finite-difference gradient check probes.
inline double simulator_batch_loss(const SimulatorModel& m,
                                   const std::vector<TrainingSample>& batch) {
    double total = 0.0;
    long positions = 0;
    for (const auto& s : batch) {
        auto [l, n] = simulator_seq_loss(m, s.inputs, s.labels, nullptr, nullptr, 0.0);
        total += l;
        positions += n;
    }
    return positions > 0 ? total / static_cast<double>(positions) : 0.0;
}

// Analytic gradient of simulator_batch_loss.
inline std::pair<double, SimulatorGradients> simulator_batch_grad(
    const SimulatorModel& m, const std::vector<TrainingSample>& batch) {
    long positions = 0;
    for (const auto& s : batch) positions += static_cast<long>(s.inputs.size());
    SimulatorGradients g = SimulatorGradients::zeros_like(m);
    double total = 0.0;
    double w = positions > 0 ? 1.0 / static_cast<double>(positions) : 0.0;
    for (const auto& s : batch) {
        auto [l, n] = simulator_seq_loss(m, s.inputs, s.labels, nullptr, &g, w);
        total += l;
        (void)n;
    }
    return {positions > 0 ? total / static_cast<double>(positions) : 0.0, std::move(g)};
}

inline SimulatorModel init_simulator(const Catalog& catalog, const SimulatorConfig& config) {
    config.validate();
    SimulatorModel m;
    m.config = config;
    for (const auto& [id, rec] : catalog.items()) m.item_ids.push_back(id);
    m.rebuild_index();
    const int d = config.embed_dim;
    std::mt19937_64 rng(config.seed);
    m.item_emb.resize(static_cast<Eigen::Index>(m.item_ids.size()), d);
    simdetail::xavier_init(m.item_emb, rng);
    m.pos_emb.resize(config.max_seq_len, d);
    simdetail::xavier_init(m.pos_emb, rng);
    for (int b = 0; b < config.num_blocks; ++b) {
        AttentionBlock blk;
        blk.wq.resize(d, d); blk.wk.resize(d, d); blk.wv.resize(d, d); blk.wo.resize(d, d);
        simdetail::xavier_init(blk.wq, rng);
        simdetail::xavier_init(blk.wk, rng);
        simdetail::xavier_init(blk.wv, rng);
        simdetail::xavier_init(blk.wo, rng);
        blk.bq = VectorXd::Zero(d); blk.bk = VectorXd::Zero(d);
        blk.bv = VectorXd::Zero(d); blk.bo = VectorXd::Zero(d);
        blk.w1.resize(d, d); blk.w2.resize(d, d);
        simdetail::xavier_init(blk.w1, rng);
        simdetail::xavier_init(blk.w2, rng);
        blk.b1 = VectorXd::Zero(d); blk.b2 = VectorXd::Zero(d);
        blk.ln1_g = VectorXd::Ones(d); blk.ln1_b = VectorXd::Zero(d);
        blk.ln2_g = VectorXd::Ones(d); blk.ln2_b = VectorXd::Zero(d);
        m.blocks.push_back(std::move(blk));
    }
    m.lnf_g = VectorXd::Ones(d);
    m.lnf_b = VectorXd::Zero(d);
    return m;
}

namespace simdetail {

struct AdamState {
    SimulatorGradients m, v;
    long step = 0;
};

inline void adam_update(SimulatorModel& model, SimulatorGradients& grads, AdamState& st,
                        double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    constexpr double clip_norm = 5.0;

    double sq = 0.0;
    for_each_tensor(grads, [&](auto& t) { sq += t.squaredNorm(); });
    double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        double s = clip_norm / norm;
        for_each_tensor(grads, [&](auto& t) { t *= s; });
    }

    st.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));

    for_each_tensor_pair(st.m, grads, [&](auto& mt, auto& gt) {
        mt = beta1 * mt + (1.0 - beta1) * gt;
    });
    for_each_tensor_pair(st.v, grads, [&](auto& vt, auto& gt) {
        vt = beta2 * vt + (1.0 - beta2) * gt.cwiseProduct(gt);
    });

    // walk model/m/v in lockstep via flattened triplets
    std::vector<MatrixXd*> pm, mm, vm;
    std::vector<VectorXd*> pv, mv, vv;
    for_each_tensor(model, [&](auto& t) {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, MatrixXd>) pm.push_back(&t);
        else pv.push_back(&t);
    });
    for_each_tensor(st.m, [&](auto& t) {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, MatrixXd>) mm.push_back(&t);
        else mv.push_back(&t);
    });
    for_each_tensor(st.v, [&](auto& t) {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, MatrixXd>) vm.push_back(&t);
        else vv.push_back(&t);
    });
    for (std::size_t i = 0; i < pm.size(); ++i) {
        auto mhat = (*mm[i] / bc1).array();
        auto vhat = (*vm[i] / bc2).array();
        pm[i]->array() -= lr * mhat / (vhat.sqrt() + eps);
    }
    for (std::size_t i = 0; i < pv.size(); ++i) {
        auto mhat = (*mv[i] / bc1).array();
        auto vhat = (*vv[i] / bc2).array();
        pv[i]->array() -= lr * mhat / (vhat.sqrt() + eps);
    }
}

}  // namespace simdetail

/// Held-out next-item accuracy: for each sequence the model reads everything
/// but the last item and must place that last item within the top k.
inline double hit_at_k(const SimulatorModel& model, const std::vector<InteractionSeq>& seqs,
                       int k) {
    if (seqs.empty()) return 0.0;
    long hits = 0;
    for (const auto& s : seqs) {
        if (s.items.size() < 2) continue;
        std::vector<ItemId> prefix(s.items.begin(), s.items.end() - 1);
        if (model.rank_of(s.items.back(), prefix) <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

/// Trains the simulator. The last item of every sequence is held out for
/// the hit@10 report and never used as a training label; everything before
/// it is teacher-forced next-item prediction with full-vocabulary softmax.
/// Deterministic for a fixed config seed and input order.
inline std::pair<SimulatorModel, TrainReport> train_simulator(
    const std::vector<InteractionSeq>& train_seqs, const Catalog& catalog,
    const SimulatorConfig& config) {
    config.validate();
    if (train_seqs.empty()) throw DomainError("train_simulator: no training sequences");
    for (const auto& s : train_seqs)
        if (s.items.size() < 2)
            throw DomainError("train_simulator: sequence for user " +
                              std::to_string(s.user_id) + " shorter than 2");

    auto t_start = std::chrono::steady_clock::now();
    SimulatorModel model = init_simulator(catalog, config);

    // fingerprint ties the checkpoint to exactly this data + config
    {
        Sha256 h;
        std::string cfg = config.to_json().dump();
        h.update(cfg);
        for (const auto& s : train_seqs) {
            h.update(&s.user_id, sizeof(s.user_id));
            h.update(s.items.data(), s.items.size() * sizeof(ItemId));
        }
        for (auto id : model.item_ids) h.update(&id, sizeof(id));
        model.train_fingerprint = h.hex_digest();
    }

    const int L = config.max_seq_len;
    std::vector<TrainingSample> samples;
    std::vector<std::pair<std::vector<int>, int>> holdout;  // prefix, held-out label
    for (const auto& s : train_seqs) {
        std::vector<int> idx;
        idx.reserve(s.items.size());
        for (auto id : s.items) idx.push_back(model.dense_index(id));
        std::vector<int> prefix(idx.begin(), idx.end() - 1);
        if (static_cast<int>(prefix.size()) > L)
            prefix.erase(prefix.begin(), prefix.end() - L);
        holdout.push_back({prefix, idx.back()});
        if (prefix.size() < 2) continue;  // no transition to learn from
        TrainingSample sample;
        sample.inputs.assign(prefix.begin(), prefix.end() - 1);
        sample.labels.assign(prefix.begin() + 1, prefix.end());
        samples.push_back(std::move(sample));
    }

    TrainReport report;
    simdetail::AdamState adam;
    adam.m = SimulatorGradients::zeros_like(model);
    adam.v = SimulatorGradients::zeros_like(model);
    std::mt19937_64 order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::mt19937_64 drop_rng(config.seed ^ 0x2545f4914f6cdd1dULL);

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        deterministic_shuffle(order, order_rng);
        double epoch_loss = 0.0;
        long epoch_positions = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::size_t end = std::min(order.size(), start + config.batch_size);
            long positions = 0;
            for (std::size_t i = start; i < end; ++i)
                positions += static_cast<long>(samples[order[i]].inputs.size());
            SimulatorGradients grads = SimulatorGradients::zeros_like(model);
            double w = 1.0 / static_cast<double>(positions);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = samples[order[i]];
                auto [l, n] = simulator_seq_loss(model, s.inputs, s.labels,
                                                 config.dropout > 0 ? &drop_rng : nullptr,
                                                 &grads, w);
                batch_loss += l;
                (void)n;
            }
            if (!std::isfinite(batch_loss))
                throw StateError("non-finite training loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(batch_index));
            simdetail::adam_update(model, grads, adam, config.learning_rate);
            epoch_loss += batch_loss;
            epoch_positions += positions;
            ++batch_index;
        }
        report.epoch_loss.push_back(
            epoch_positions > 0 ? epoch_loss / static_cast<double>(epoch_positions) : 0.0);
    }

    // held-out hit@10 on the final items
    long hits = 0;
    for (const auto& [prefix, label] : holdout) {
        if (prefix.empty()) continue;
        simdetail::ForwardCache fc;
        simulator_forward(model, prefix, nullptr, fc);
        VectorXd logits = model.item_emb * fc.hidden.row(fc.hidden.rows() - 1).transpose();
        double target_logit = logits(label);
        int better = 0;
        for (Eigen::Index i = 0; i < logits.size(); ++i) {
            if (logits(i) > target_logit || (logits(i) == target_logit && i < label)) ++better;
        }
        if (better < 10) ++hits;
    }
    report.hit_at_10 =
        holdout.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(holdout.size());
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(model), report};
}

// --- inference --------------------------------------------------------------

inline VectorXd SimulatorModel::final_logits(std::span<const ItemId> seq) const {
    if (seq.empty()) throw DomainError("final_logits: empty sequence");
    std::vector<int> idx;
    std::size_t start = seq.size() > static_cast<std::size_t>(config.max_seq_len)
                            ? seq.size() - static_cast<std::size_t>(config.max_seq_len)
                            : 0;
    for (std::size_t i = start; i < seq.size(); ++i) idx.push_back(dense_index(seq[i]));
    simdetail::ForwardCache fc;
    simulator_forward(*this, idx, nullptr, fc);
    return item_emb * fc.hidden.row(fc.hidden.rows() - 1).transpose();
}

inline std::vector<double> SimulatorModel::next_item_dist(std::span<const ItemId> seq) const {
    VectorXd logits = final_logits(seq);
    double mx = logits.maxCoeff();
    VectorXd ex = (logits.array() - mx).exp();
    double sum = ex.sum();
    std::vector<double> out(static_cast<std::size_t>(ex.size()));
    for (Eigen::Index i = 0; i < ex.size(); ++i)
        out[static_cast<std::size_t>(i)] = ex(i) / sum;
    return out;
}

inline double SimulatorModel::log_prob(ItemId item, std::span<const ItemId> seq) const {
    VectorXd logits = final_logits(seq);
    int i = dense_index(item);
    double mx = logits.maxCoeff();
    double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits(i) - lse;
}

inline int SimulatorModel::rank_of(ItemId item, std::span<const ItemId> seq) const {
    VectorXd logits = final_logits(seq);
    int i = dense_index(item);
    double li = logits(i);
    int better = 0;
    for (Eigen::Index j = 0; j < logits.size(); ++j) {
        if (logits(j) > li || (logits(j) == li && j < i)) ++better;
    }
    return better + 1;
}

inline std::string SimulatorModel::params_sha256() const {
    Sha256 h;
    simdetail::for_each_tensor(const_cast<SimulatorModel&>(*this), [&](auto& t) {
        h.update(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
    });
    return h.hex_digest();
}

// --- checkpoint format ------------------------------------------------------
//
//   8 bytes magic "IPPSIM1\n", little-endian u64 header length, JSON header
//   (version, config, item ids, fingerprint, tensor shapes), then raw
//   row-major doubles for every tensor in for_each_tensor order.

inline void SimulatorModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
    json shapes = json::array();
    simdetail::for_each_tensor(const_cast<SimulatorModel&>(*this), [&](auto& t) {
        shapes.push_back(json::array({t.rows(), t.cols()}));
    });
    json header{{"v", 1},
                {"config", config.to_json()},
                {"item_ids", item_ids},
                {"fingerprint", train_fingerprint},
                {"shapes", shapes}};
    std::string hdr = header.dump();
    out.write("IPPSIM1\n", 8);
    std::uint64_t n = hdr.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    simdetail::for_each_tensor(const_cast<SimulatorModel&>(*this), [&](auto& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw ConfigError("short write on checkpoint: " + path.string());
}

inline SimulatorModel SimulatorModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != "IPPSIM1\n")
        throw ParseError(path.string() + ": not a simulator checkpoint");
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::string hdr(n, '\0');
    in.read(hdr.data(), static_cast<std::streamsize>(n));
    if (!in) throw ParseError(path.string() + ": truncated checkpoint header");
    json header = json::parse(hdr, nullptr, false);
    if (header.is_discarded() || header.at("v").get<int>() != 1)
        throw ParseError(path.string() + ": unsupported checkpoint header");

    SimulatorModel m;
    m.config = SimulatorConfig::from_json(header.at("config"));
    m.item_ids = header.at("item_ids").get<std::vector<ItemId>>();
    m.train_fingerprint = header.at("fingerprint").get<std::string>();
    m.rebuild_index();

    const int d = m.config.embed_dim;
    m.item_emb.resize(static_cast<Eigen::Index>(m.item_ids.size()), d);
    m.pos_emb.resize(m.config.max_seq_len, d);
    for (int b = 0; b < m.config.num_blocks; ++b) {
        AttentionBlock blk;
        blk.wq.resize(d, d); blk.wk.resize(d, d); blk.wv.resize(d, d); blk.wo.resize(d, d);
        blk.bq.resize(d); blk.bk.resize(d); blk.bv.resize(d); blk.bo.resize(d);
        blk.w1.resize(d, d); blk.w2.resize(d, d);
        blk.b1.resize(d); blk.b2.resize(d);
        blk.ln1_g.resize(d); blk.ln1_b.resize(d);
        blk.ln2_g.resize(d); blk.ln2_b.resize(d);
        m.blocks.push_back(std::move(blk));
    }
    m.lnf_g.resize(d);
    m.lnf_b.resize(d);

    std::size_t tensor_i = 0;
    const json& shapes = header.at("shapes");
    simdetail::for_each_tensor(m, [&](auto& t) {
        const auto& shape = shapes.at(tensor_i++);
        if (t.rows() != shape.at(0).get<Eigen::Index>() ||
            t.cols() != shape.at(1).get<Eigen::Index>())
            throw ParseError(path.string() + ": tensor shape mismatch in checkpoint");
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!in) throw ParseError(path.string() + ": truncated checkpoint tensors");
    return m;
}

}  // namespace ipp
