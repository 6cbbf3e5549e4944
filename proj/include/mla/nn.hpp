#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mla/rng.hpp"
#include "mla/tensor.hpp"

namespace mla {

// Kaiming-uniform fill: samples in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
void kaiming_uniform_fill(Tensor& w, Rng& rng, int fan_in);

// y = x W^T + b, broadcast over leading dims of x.
class Linear {
public:
    Linear() = default;
    Linear(int in_dim, int out_dim, Rng& rng, bool bias = true);

    Tensor forward(const Tensor& x) const;
    std::vector<Tensor> parameters() const;

    int in_dim() const { return weight.dim(1); }
    int out_dim() const { return weight.dim(0); }
    bool has_bias() const { return bias.defined(); }

    Tensor weight;  // (out_dim, in_dim)
    Tensor bias;    // (out_dim), optional
};

// Zero-padded cross-correlation (no kernel flip) with bias.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_c, int out_c, int kh, int kw, int stride, int padding, Rng& rng);

    Tensor forward(const Tensor& x) const;  // (b,in_c,h,w) -> (b,out_c,oh,ow)
    std::vector<Tensor> parameters() const;

    int in_channels() const { return weight.dim(1); }
    int out_channels() const { return weight.dim(0); }

    Tensor weight;  // (out_c, in_c, kh, kw)
    Tensor bias;    // (out_c)
    int stride = 1;
    int padding = 0;
};

// out = gelu(conv2(gelu(conv1(x))) + proj(x)); proj is a 1x1 conv when the
// channel count or stride changes, identity otherwise.
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(int in_c, int out_c, int stride, Rng& rng);

    Tensor forward(const Tensor& x) const;
    std::vector<Tensor> parameters() const;

    bool has_projection() const { return proj.has_value(); }

    Conv2d conv1;  // 3x3, stride as given, padding 1
    Conv2d conv2;  // 3x3, stride 1, padding 1
    std::optional<Conv2d> proj;
};

// Output spatial extent of a padded strided correlation.
int conv_out_extent(int in, int kernel, int stride, int padding);

}  // namespace mla
