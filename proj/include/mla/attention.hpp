#pragma once

#include <vector>

#include "mla/nn.hpp"
#include "mla/tensor.hpp"

namespace mla {

// One attention branch: tokenize a tapped feature map per channel, run
// multi-head scaled-dot-product self-attention over the channel tokens, and
// embed each re-weighted token with a two-layer GELU MLP.
struct BranchConfig {
    int tap_id = 0;        // backbone block index this branch taps
    int d_embed = 64;      // channel token width after projection
    int n_heads = 3;       // attention heads
    int d_k = 21;          // per-head inner width (default floor(d_embed / n_heads))
    int d_mlp_hidden = 128;
    int d_out = 32;        // per-channel output embedding width

    void validate() const;
};

class AttentionBranch {
public:
    AttentionBranch() = default;
    // spatial_cells = h*w of the tapped feature map.
    AttentionBranch(const BranchConfig& cfg, int spatial_cells, Rng& rng);

    const BranchConfig& config() const { return cfg_; }
    int spatial_cells() const { return token_proj.in_dim(); }
    std::vector<Tensor> parameters() const;
    // Parameter handles with checkpoint-manifest names relative to the branch.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

    Linear token_proj;          // h*w -> d_embed, shared across channels
    std::vector<Linear> w_q;    // n_heads of d_embed -> d_k, bias-free
    std::vector<Linear> w_k;
    std::vector<Linear> w_v;
    Linear w_o;                 // n_heads*d_k -> d_embed, bias-free
    Linear mlp_in;              // d_embed -> d_mlp_hidden
    Linear mlp_out;             // d_mlp_hidden -> d_out

private:
    BranchConfig cfg_;
};

struct AttentionResult {
    Tensor output;   // same shape as v
    Tensor weights;  // (b, c, c) row-stochastic attention weights
};

// (b,c,h,w) -> (b,c,d_embed): flatten each channel over its spatial extent
// and apply the shared projection. No positional encoding.
Tensor tokenize(const Tensor& feature_map, const Linear& proj);

// softmax(q k^T / sqrt(d_k)) v over the token axis.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// head_i = scaled_dot_attention(x W_i^Q, x W_i^K, x W_i^V); concat; W^O.
Tensor multi_head(const Tensor& tokens, const AttentionBranch& branch);

// tokenize -> multi_head -> per-token MLP -> (b, c*d_out).
Tensor branch_forward(const Tensor& feature_map, const AttentionBranch& branch);

}  // namespace mla
