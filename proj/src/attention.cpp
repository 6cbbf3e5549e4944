#include "mla/attention.hpp"

#include <cmath>

#include "mla/errors.hpp"

namespace mla {

void BranchConfig::validate() const {
    if (tap_id < 0) throw ConfigError("branch: tap_id must be non-negative");
    if (d_embed <= 0 || n_heads <= 0 || d_k <= 0 || d_mlp_hidden <= 0 || d_out <= 0)
        throw ConfigError("branch: all widths and the head count must be positive");
}

AttentionBranch::AttentionBranch(const BranchConfig& cfg, int spatial_cells, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    if (spatial_cells <= 0) throw ConfigError("branch: spatial_cells must be positive");
    token_proj = Linear(spatial_cells, cfg.d_embed, rng);
    w_q.reserve(cfg.n_heads);
    w_k.reserve(cfg.n_heads);
    w_v.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
        w_q.emplace_back(cfg.d_embed, cfg.d_k, rng, /*bias=*/false);
        w_k.emplace_back(cfg.d_embed, cfg.d_k, rng, /*bias=*/false);
        w_v.emplace_back(cfg.d_embed, cfg.d_k, rng, /*bias=*/false);
    }
    w_o = Linear(cfg.n_heads * cfg.d_k, cfg.d_embed, rng, /*bias=*/false);
    mlp_in = Linear(cfg.d_embed, cfg.d_mlp_hidden, rng);
    mlp_out = Linear(cfg.d_mlp_hidden, cfg.d_out, rng);
}

std::vector<Tensor> AttentionBranch::parameters() const {
    std::vector<Tensor> ps;
    for (auto& [name, p] : named_parameters()) ps.push_back(p);
    return ps;
}

std::vector<std::pair<std::string, Tensor>> AttentionBranch::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> ps;
    ps.emplace_back("token_proj.weight", token_proj.weight);
    ps.emplace_back("token_proj.bias", token_proj.bias);
    for (int h = 0; h < cfg_.n_heads; ++h) {
        const std::string hs = "head" + std::to_string(h) + ".";
        ps.emplace_back(hs + "wq", w_q[h].weight);
        ps.emplace_back(hs + "wk", w_k[h].weight);
        ps.emplace_back(hs + "wv", w_v[h].weight);
    }
    ps.emplace_back("wo", w_o.weight);
    ps.emplace_back("mlp_in.weight", mlp_in.weight);
    ps.emplace_back("mlp_in.bias", mlp_in.bias);
    ps.emplace_back("mlp_out.weight", mlp_out.weight);
    ps.emplace_back("mlp_out.bias", mlp_out.bias);
    return ps;
}

Tensor tokenize(const Tensor& feature_map, const Linear& proj) {
    if (feature_map.rank() != 4)
        throw DimensionError("tokenize: expected (b,c,h,w), got " + shape_str(feature_map.shape()));
    const int b = feature_map.dim(0), c = feature_map.dim(1);
    const int cells = feature_map.dim(2) * feature_map.dim(3);
    if (cells != proj.in_dim())
        throw DimensionError("tokenize: spatial size " + std::to_string(cells) +
                             " does not match projection input " + std::to_string(proj.in_dim()));
    return proj.forward(reshape(feature_map, {b, c, cells}));
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.shape() != k.shape() || q.shape() != v.shape())
        throw DimensionError("scaled_dot_attention: q/k/v shapes differ: " + shape_str(q.shape()) +
                             " " + shape_str(k.shape()) + " " + shape_str(v.shape()));
    if (q.rank() < 2) throw DimensionError("scaled_dot_attention: rank must be >= 2");
    const int d_k = q.dim(-1);
    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(d_k)));
    Tensor weights = softmax_lastdim(scores);
    return {matmul(weights, v), weights};
}

Tensor multi_head(const Tensor& tokens, const AttentionBranch& branch) {
    const auto& cfg = branch.config();
    if (tokens.rank() != 3 || tokens.dim(-1) != cfg.d_embed)
        throw ConfigError("multi_head: tokens " + shape_str(tokens.shape()) +
                          " do not match d_embed " + std::to_string(cfg.d_embed));
    if (static_cast<int>(branch.w_q.size()) != cfg.n_heads)
        throw ConfigError("multi_head: head parameter count " +
                          std::to_string(branch.w_q.size()) + " != n_heads " +
                          std::to_string(cfg.n_heads));
    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
        Tensor qh = branch.w_q[h].forward(tokens);
        Tensor kh = branch.w_k[h].forward(tokens);
        Tensor vh = branch.w_v[h].forward(tokens);
        heads.push_back(scaled_dot_attention(qh, kh, vh).output);
    }
    return branch.w_o.forward(concat_lastdim(heads));
}

Tensor branch_forward(const Tensor& feature_map, const AttentionBranch& branch) {
    Tensor tokens = tokenize(feature_map, branch.token_proj);
    Tensor attended = multi_head(tokens, branch);
    Tensor embedded = branch.mlp_out.forward(gelu(branch.mlp_in.forward(attended)));
    const int b = embedded.dim(0), c = embedded.dim(1), d = embedded.dim(2);
    return reshape(embedded, {b, c * d});
}

}  // namespace mla
