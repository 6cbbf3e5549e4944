#include "mla/nn.hpp"

#include <cmath>

#include "mla/errors.hpp"
#include "mla/kernels.hpp"

namespace mla {

int conv_out_extent(int in, int kernel, int stride, int padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

void kaiming_uniform_fill(Tensor& w, Rng& rng, int fan_in) {
    if (fan_in <= 0) throw UsageError("kaiming_uniform_fill: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const bool narrow = w.dtype() == Dtype::f32;  // keep storage representable at its dtype
    for (double& v : w.mutable_data()) {
        v = rng.uniform(-bound, bound);
        if (narrow) v = static_cast<double>(static_cast<float>(v));
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in_dim, int out_dim, Rng& rng, bool with_bias) {
    weight = Tensor::zeros({out_dim, in_dim});
    kaiming_uniform_fill(weight, rng, in_dim);
    weight.set_requires_grad(true);
    if (with_bias) {
        bias = Tensor::zeros({out_dim});
        bias.set_requires_grad(true);
    }
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.dim(-1) != weight.dim(1))
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    const int in_d = weight.dim(1);
    const int out_d = weight.dim(0);
    const int rows = static_cast<int>(x.numel()) / in_d;
    Tensor x2 = reshape(x, {rows, in_d});
    Tensor y2 = matmul(x2, transpose_last2(weight));
    if (bias.defined()) y2 = add_bias_lastdim(y2, bias);
    std::vector<int> out_shape(x.shape());
    out_shape.back() = out_d;
    return reshape(y2, std::move(out_shape));
}

std::vector<Tensor> Linear::parameters() const {
    if (bias.defined()) return {weight, bias};
    return {weight};
}

// ---------------------------------------------------------------------------
// Conv2d (im2col + matmul; zero-padded cross-correlation)
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int ic, oc, kh, kw, h, w, oh, ow, stride, padding;
    int patch() const { return ic * kh * kw; }
    int cells() const { return oh * ow; }
};

void im2col(const double* x, double* cols, const ConvDims& d) {
    for (int c = 0; c < d.ic; ++c) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                double* row = cols + (static_cast<size_t>(c) * d.kh * d.kw + ki * d.kw + kj) *
                                         d.cells();
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.padding + ki;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.padding + kj;
                        const bool inside = iy >= 0 && iy < d.h && ix >= 0 && ix < d.w;
                        row[oy * d.ow + ox] =
                            inside ? x[(static_cast<size_t>(c) * d.h + iy) * d.w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col, fixed traversal order.
void col2im_acc(const double* cols, double* dx, const ConvDims& d) {
    for (int c = 0; c < d.ic; ++c) {
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const double* row = cols + (static_cast<size_t>(c) * d.kh * d.kw + ki * d.kw + kj) *
                                               d.cells();
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.padding + ki;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.padding + kj;
                        if (ix < 0 || ix >= d.w) continue;
                        dx[(static_cast<size_t>(c) * d.h + iy) * d.w + ix] += row[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Conv2d::Conv2d(int in_c, int out_c, int kh, int kw, int stride_, int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
    if (stride <= 0 || padding < 0) throw ConfigError("conv2d: bad stride/padding");
    weight = Tensor::zeros({out_c, in_c, kh, kw});
    kaiming_uniform_fill(weight, rng, in_c * kh * kw);
    weight.set_requires_grad(true);
    bias = Tensor::zeros({out_c});
    bias.set_requires_grad(true);
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.rank() != 4)
        throw DimensionError("conv2d: expected (b,c,h,w), got " + shape_str(x.shape()));
    if (x.dim(1) != weight.dim(1))
        throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) +
                             " do not match weight " + shape_str(weight.shape()));
    ConvDims d{weight.dim(1), weight.dim(0), weight.dim(2), weight.dim(3),
               x.dim(2),      x.dim(3),      0,             0,
               stride,        padding};
    d.oh = conv_out_extent(d.h, d.kh, d.stride, d.padding);
    d.ow = conv_out_extent(d.w, d.kw, d.stride, d.padding);
    if (d.oh < 1 || d.ow < 1)
        throw DimensionError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                             " exceeds padded input " + shape_str(x.shape()));

    const int b = x.dim(0);
    const auto& K = kernels::table();
    std::vector<double> cols(static_cast<size_t>(d.patch()) * d.cells());
    std::vector<double> out(static_cast<size_t>(b) * d.oc * d.cells());
    const double* xp = x.data().data();
    const double* wp = weight.data().data();
    const double* bp = bias.data().data();
    for (int s = 0; s < b; ++s) {
        im2col(xp + static_cast<size_t>(s) * d.ic * d.h * d.w, cols.data(), d);
        double* o = out.data() + static_cast<size_t>(s) * d.oc * d.cells();
        K.matmul(wp, cols.data(), o, d.oc, d.patch(), d.cells());
        for (int oc = 0; oc < d.oc; ++oc) {
            double* row = o + static_cast<size_t>(oc) * d.cells();
            for (int p = 0; p < d.cells(); ++p) row[p] += bp[oc];
        }
    }

    return make_node({b, d.oc, d.oh, d.ow}, std::move(out), {x, weight, bias},
                     [d, b](TensorImpl& self) {
                         auto& px = *self.parents[0];
                         auto& pw = *self.parents[1];
                         auto& pb = *self.parents[2];
                         const auto& Kk = kernels::table();
                         const int patch = d.patch(), cells = d.cells();
                         std::vector<double> cols(static_cast<size_t>(patch) * cells);
                         std::vector<double> scratch(
                             std::max(static_cast<size_t>(patch) * cells,
                                      static_cast<size_t>(d.oc) * patch));
                         std::vector<double> tr(std::max(static_cast<size_t>(cells) * patch,
                                                         static_cast<size_t>(patch) * d.oc));
                         for (int s = 0; s < b; ++s) {
                             const double* g = self.grad.data() +
                                               static_cast<size_t>(s) * d.oc * cells;
                             if (pb.tracked()) {
                                 ensure_grad(pb);
                                 for (int oc = 0; oc < d.oc; ++oc) {
                                     double sum = 0.0;
                                     const double* row = g + static_cast<size_t>(oc) * cells;
                                     for (int p = 0; p < cells; ++p) sum += row[p];
                                     pb.grad[oc] += sum;
                                 }
                             }
                             if (pw.tracked()) {
                                 ensure_grad(pw);
                                 im2col(px.data.data() + static_cast<size_t>(s) * d.ic * d.h * d.w,
                                        cols.data(), d);
                                 kernels::transpose(cols.data(), tr.data(), patch, cells);
                                 Kk.matmul(g, tr.data(), scratch.data(), d.oc, cells, patch);
                                 Kk.acc(pw.grad.data(), scratch.data(),
                                        static_cast<size_t>(d.oc) * patch);
                             }
                             if (px.tracked()) {
                                 ensure_grad(px);
                                 kernels::transpose(pw.data.data(), tr.data(), d.oc, patch);
                                 Kk.matmul(tr.data(), g, scratch.data(), patch, d.oc, cells);
                                 col2im_acc(scratch.data(),
                                            px.grad.data() + static_cast<size_t>(s) * d.ic * d.h * d.w,
                                            d);
                             }
                         }
                     });
}

std::vector<Tensor> Conv2d::parameters() const { return {weight, bias}; }

// ---------------------------------------------------------------------------
// ResidualBlock
// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(int in_c, int out_c, int stride, Rng& rng) {
    conv1 = Conv2d(in_c, out_c, 3, 3, stride, 1, rng);
    conv2 = Conv2d(out_c, out_c, 3, 3, 1, 1, rng);
    if (in_c != out_c || stride != 1) proj = Conv2d(in_c, out_c, 1, 1, stride, 0, rng);
}

Tensor ResidualBlock::forward(const Tensor& x) const {
    Tensor h = gelu(conv1.forward(x));
    h = conv2.forward(h);
    Tensor skip = proj ? proj->forward(x) : x;
    return gelu(add(h, skip));
}

std::vector<Tensor> ResidualBlock::parameters() const {
    std::vector<Tensor> ps = conv1.parameters();
    for (auto& p : conv2.parameters()) ps.push_back(p);
    if (proj)
        for (auto& p : proj->parameters()) ps.push_back(p);
    return ps;
}

}  // namespace mla
