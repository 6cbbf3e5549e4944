#include "mla/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "mla/kernels.hpp"

namespace mla {

namespace {

std::atomic<int64_t> g_node_counter{0};
Dtype g_default_dtype = Dtype::f64;

void quantize(std::vector<double>& data, Dtype dt) {
    if (dt == Dtype::f32)
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

std::shared_ptr<TensorImpl> new_impl(std::vector<int> shape, std::vector<double> data, Dtype dt) {
    for (int d : shape)
        if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = dt;
    quantize(data, impl->dtype);
    impl->data = std::move(data);
    impl->node_id = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    return impl;
}

std::shared_ptr<TensorImpl> new_impl(std::vector<int> shape, std::vector<double> data) {
    return new_impl(std::move(shape), std::move(data), g_default_dtype);
}

const TensorImpl& deref(const Tensor& t) {
    if (!t.defined()) throw UsageError("operation on an undefined tensor");
    return *t.impl();
}

}  // namespace

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype d) { g_default_dtype = d; }

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(new_impl(std::move(shape), std::move(d)));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    std::vector<double> d(shape_numel(shape), value);
    return Tensor(new_impl(std::move(shape), std::move(d)));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
    return Tensor(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, Dtype dt) {
    return Tensor(new_impl(std::move(shape), std::move(data), dt));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<int>& Tensor::shape() const { return deref(*this).shape; }
int Tensor::rank() const { return static_cast<int>(deref(*this).shape.size()); }

int Tensor::dim(int i) const {
    const auto& s = deref(*this).shape;
    int r = static_cast<int>(s.size());
    if (i < 0) i += r;
    if (i < 0 || i >= r)
        throw UsageError("dim index out of range for shape " + shape_str(s));
    return s[i];
}

size_t Tensor::numel() const { return deref(*this).numel(); }
Dtype Tensor::dtype() const { return deref(*this).dtype; }
int64_t Tensor::node_id() const { return deref(*this).node_id; }

std::span<const double> Tensor::data() const {
    const auto& t = deref(*this);
    return {t.data.data(), t.data.size()};
}

std::span<double> Tensor::mutable_data() {
    deref(*this);
    return {impl_->data.data(), impl_->data.size()};
}

double Tensor::value() const {
    const auto& t = deref(*this);
    if (t.numel() != 1) throw UsageError("value() on non-scalar tensor " + shape_str(t.shape));
    return t.data[0];
}

bool Tensor::requires_grad() const { return deref(*this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    deref(*this);
    impl_->requires_grad = v;
    return *this;
}

bool Tensor::is_leaf() const { return deref(*this).leaf(); }
bool Tensor::has_grad() const { return !deref(*this).grad.empty(); }

std::span<const double> Tensor::grad() const {
    const auto& t = deref(*this);
    if (t.grad.empty()) throw UsageError("grad requested but never populated");
    return {t.grad.data(), t.grad.size()};
}

std::span<double> Tensor::mutable_grad() {
    deref(*this);
    ensure_grad(*impl_);
    return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
    deref(*this);
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.numel(), 0.0);
}

Tensor make_node(std::vector<int> shape, std::vector<double> data,
                 const std::vector<Tensor>& inputs, std::function<void(TensorImpl&)> bw) {
    auto impl = new_impl(std::move(shape), std::move(data));
    bool tracked = false;
    for (const auto& in : inputs)
        if (in.impl() && in.impl()->tracked()) tracked = true;
    if (tracked) {
        impl->parents.reserve(inputs.size());
        for (const auto& in : inputs) impl->parents.push_back(in.impl());
        impl->backward_fn = std::move(bw);
    }
    return Tensor(impl);
}

void backward(const Tensor& loss) {
    const auto root = loss.impl();
    if (!root) throw UsageError("backward on undefined tensor");
    if (root->numel() != 1)
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(root->shape));

    // Reachable subgraph, then reverse construction order.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<TensorImpl*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        TensorImpl* t = stack.back();
        stack.pop_back();
        order.push_back(t);
        for (const auto& p : t->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const TensorImpl* a, const TensorImpl* b) { return a->node_id > b->node_id; });

    // Interior gradients are scratch per sweep; leaf gradients persist so
    // repeated sweeps accumulate. Untracked constants never get a buffer.
    for (TensorImpl* t : order) {
        if (!t->tracked() && t != root.get()) continue;
        ensure_grad(*t);
        if (!t->leaf()) std::fill(t->grad.begin(), t->grad.end(), 0.0);
    }
    root->grad[0] += 1.0;

    for (TensorImpl* t : order)
        if (t->backward_fn) t->backward_fn(*t);
}

void zero_grads(const std::vector<Tensor>& params) {
    for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

namespace {

// Leading dims (everything before the trailing `keep`) must agree.
void check_leading_equal(const TensorImpl& a, const TensorImpl& b, int keep, const char* op) {
    int ra = static_cast<int>(a.shape.size()), rb = static_cast<int>(b.shape.size());
    if (ra != rb)
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
    for (int i = 0; i < ra - keep; ++i)
        if (a.shape[i] != b.shape[i])
            throw DimensionError(std::string(op) + ": leading dims differ " + shape_str(a.shape) +
                                 " vs " + shape_str(b.shape));
}

size_t leading_count(const std::vector<int>& shape, int keep) {
    size_t n = 1;
    for (size_t i = 0; i + keep < shape.size(); ++i) n *= static_cast<size_t>(shape[i]);
    return n;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& ai = deref(a);
    const auto& bi = deref(b);
    if (ai.shape.size() < 2 || bi.shape.size() < 2)
        throw DimensionError("matmul: operands must be at least rank 2, got " +
                             shape_str(ai.shape) + " and " + shape_str(bi.shape));
    check_leading_equal(ai, bi, 2, "matmul");
    const int m = ai.shape[ai.shape.size() - 2];
    const int k = ai.shape[ai.shape.size() - 1];
    const int k2 = bi.shape[bi.shape.size() - 2];
    const int n = bi.shape[bi.shape.size() - 1];
    if (k != k2)
        throw DimensionError("matmul: inner dims do not contract, " + shape_str(ai.shape) +
                             " vs " + shape_str(bi.shape));
    const size_t batch = leading_count(ai.shape, 2);

    std::vector<int> out_shape(ai.shape.begin(), ai.shape.end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(batch * m * n);
    const auto& K = kernels::table();
    for (size_t s = 0; s < batch; ++s)
        K.matmul(ai.data.data() + s * m * k, bi.data.data() + s * k * n, out.data() + s * m * n,
                 m, k, n);

    return make_node(std::move(out_shape), std::move(out), {a, b},
                     [m, k, n, batch](TensorImpl& self) {
                         auto& pa = *self.parents[0];
                         auto& pb = *self.parents[1];
                         const auto& Kk = kernels::table();
                         std::vector<double> tr(std::max(k * n, m * k));
                         std::vector<double> tmp(std::max(m * k, k * n));
                         for (size_t s = 0; s < batch; ++s) {
                             const double* g = self.grad.data() + s * m * n;
                             if (pa.tracked()) {
                                 ensure_grad(pa);
                                 // dA = G * B^T
                                 kernels::transpose(pb.data.data() + s * k * n, tr.data(), k, n);
                                 Kk.matmul(g, tr.data(), tmp.data(), m, n, k);
                                 Kk.acc(pa.grad.data() + s * m * k, tmp.data(),
                                        static_cast<size_t>(m) * k);
                             }
                             if (pb.tracked()) {
                                 ensure_grad(pb);
                                 // dB = A^T * G
                                 kernels::transpose(pa.data.data() + s * m * k, tr.data(), m, k);
                                 Kk.matmul(tr.data(), g, tmp.data(), k, m, n);
                                 Kk.acc(pb.grad.data() + s * k * n, tmp.data(),
                                        static_cast<size_t>(k) * n);
                             }
                         }
                     });
}

Tensor softmax_lastdim(const Tensor& x) {
    const auto& xi = deref(x);
    if (xi.shape.empty()) throw DimensionError("softmax_lastdim: rank must be >= 1");
    const int n = xi.shape.back();
    const size_t rows = xi.numel() / n;
    std::vector<double> out(xi.numel());
    for (size_t r = 0; r < rows; ++r) {
        const double* in = xi.data.data() + r * n;
        double* o = out.data() + r * n;
        double mx = in[0];
        for (int j = 0; j < n; ++j) {
            if (!std::isfinite(in[j]))
                throw NumericError("softmax_lastdim: non-finite input at row " + std::to_string(r));
            mx = std::max(mx, in[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) o[j] *= inv;
    }
    return make_node(std::vector<int>(xi.shape), std::move(out), {x}, [n, rows](TensorImpl& self) {
        auto& px = *self.parents[0];
        if (!px.tracked()) return;
        ensure_grad(px);
        for (size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * n;
            const double* g = self.grad.data() + r * n;
            double* dx = px.grad.data() + r * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += g[j] * y[j];
            for (int j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& x) {
    const auto& xi = deref(x);
    std::vector<double> out(xi.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = xi.data[i];
        out[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));  // exact x * Phi(x)
    }
    return make_node(std::vector<int>(xi.shape), std::move(out), {x}, [](TensorImpl& self) {
        auto& px = *self.parents[0];
        if (!px.tracked()) return;
        ensure_grad(px);
        for (size_t i = 0; i < self.data.size(); ++i) {
            const double v = px.data[i];
            const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            px.grad[i] += self.grad[i] * (phi + v * pdf);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& ai = deref(a);
    const auto& bi = deref(b);
    if (ai.shape != bi.shape)
        throw DimensionError("add: shape mismatch " + shape_str(ai.shape) + " vs " +
                             shape_str(bi.shape));
    std::vector<double> out(ai.numel());
    kernels::table().add(ai.data.data(), bi.data.data(), out.data(), out.size());
    return make_node(std::vector<int>(ai.shape), std::move(out), {a, b}, [](TensorImpl& self) {
        for (auto& p : self.parents) {
            if (!p->tracked()) continue;
            ensure_grad(*p);
            kernels::table().acc(p->grad.data(), self.grad.data(), self.grad.size());
        }
    });
}

Tensor scale(const Tensor& a, double alpha) {
    const auto& ai = deref(a);
    std::vector<double> out(ai.numel());
    kernels::table().scale(alpha, ai.data.data(), out.data(), out.size());
    return make_node(std::vector<int>(ai.shape), std::move(out), {a}, [alpha](TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.tracked()) return;
        ensure_grad(p);
        kernels::table().axpy(alpha, self.grad.data(), p.grad.data(), self.grad.size());
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto& ai = deref(a);
    const auto& bi = deref(b);
    if (ai.shape != bi.shape)
        throw DimensionError("mul: shape mismatch " + shape_str(ai.shape) + " vs " +
                             shape_str(bi.shape));
    std::vector<double> out(ai.numel());
    kernels::table().mul(ai.data.data(), bi.data.data(), out.data(), out.size());
    return make_node(std::vector<int>(ai.shape), std::move(out), {a, b}, [](TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.tracked()) {
            ensure_grad(pa);
            kernels::table().mul_acc(self.grad.data(), pb.data.data(), pa.grad.data(),
                                     self.grad.size());
        }
        if (pb.tracked()) {
            ensure_grad(pb);
            kernels::table().mul_acc(self.grad.data(), pa.data.data(), pb.grad.data(),
                                     self.grad.size());
        }
    });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_lastdim: no inputs");
    const auto& first = deref(parts[0]);
    std::vector<int> lead(first.shape.begin(), first.shape.end() - 1);
    int total_last = 0;
    std::vector<int> lasts;
    for (const auto& p : parts) {
        const auto& pi = deref(p);
        if (pi.shape.size() != first.shape.size() ||
            !std::equal(lead.begin(), lead.end(), pi.shape.begin()))
            throw DimensionError("concat_lastdim: leading dims differ, " + shape_str(first.shape) +
                                 " vs " + shape_str(pi.shape));
        lasts.push_back(pi.shape.back());
        total_last += pi.shape.back();
    }
    const size_t rows = leading_count(first.shape, 1);
    std::vector<int> out_shape = lead;
    out_shape.push_back(total_last);
    std::vector<double> out(rows * total_last);
    for (size_t r = 0; r < rows; ++r) {
        double* dst = out.data() + r * total_last;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const auto& src = parts[pi].impl()->data;
            std::memcpy(dst, src.data() + r * lasts[pi], sizeof(double) * lasts[pi]);
            dst += lasts[pi];
        }
    }
    return make_node(std::move(out_shape), std::move(out), parts,
                     [rows, lasts, total_last](TensorImpl& self) {
                         for (size_t r = 0; r < rows; ++r) {
                             const double* g = self.grad.data() + r * total_last;
                             for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                                 auto& p = *self.parents[pi];
                                 if (p.tracked()) {
                                     ensure_grad(p);
                                     kernels::table().acc(p.grad.data() + r * lasts[pi], g,
                                                          static_cast<size_t>(lasts[pi]));
                                 }
                                 g += lasts[pi];
                             }
                         }
                     });
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    const auto& xi = deref(x);
    if (shape_numel(new_shape) != xi.numel())
        throw DimensionError("reshape: cannot view " + shape_str(xi.shape) + " as " +
                             shape_str(new_shape));
    std::vector<double> out(xi.data);
    return make_node(std::move(new_shape), std::move(out), {x}, [](TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.tracked()) return;
        ensure_grad(p);
        kernels::table().acc(p.grad.data(), self.grad.data(), self.grad.size());
    });
}

Tensor flatten(const Tensor& x) {
    const auto& xi = deref(x);
    if (xi.shape.size() < 2) throw DimensionError("flatten: rank must be >= 2");
    return reshape(x, {xi.shape[0], static_cast<int>(xi.numel()) / xi.shape[0]});
}

Tensor transpose_last2(const Tensor& x) {
    const auto& xi = deref(x);
    if (xi.shape.size() < 2) throw DimensionError("transpose_last2: rank must be >= 2");
    const int r = xi.shape[xi.shape.size() - 2];
    const int c = xi.shape[xi.shape.size() - 1];
    const size_t batch = leading_count(xi.shape, 2);
    std::vector<int> out_shape(xi.shape);
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    std::vector<double> out(xi.numel());
    for (size_t s = 0; s < batch; ++s)
        kernels::transpose(xi.data.data() + s * r * c, out.data() + s * r * c, r, c);
    return make_node(std::move(out_shape), std::move(out), {x}, [r, c, batch](TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.tracked()) return;
        ensure_grad(p);
        std::vector<double> tr(static_cast<size_t>(r) * c);
        for (size_t s = 0; s < batch; ++s) {
            kernels::transpose(self.grad.data() + s * r * c, tr.data(), c, r);
            kernels::table().acc(p.grad.data() + s * r * c, tr.data(), tr.size());
        }
    });
}

Tensor mean_spatial(const Tensor& x) {
    const auto& xi = deref(x);
    if (xi.shape.size() != 4)
        throw DimensionError("mean_spatial: expected (b,c,h,w), got " + shape_str(xi.shape));
    const int b = xi.shape[0], c = xi.shape[1];
    const size_t hw = static_cast<size_t>(xi.shape[2]) * xi.shape[3];
    std::vector<double> out(static_cast<size_t>(b) * c);
    for (size_t i = 0; i < out.size(); ++i) {
        const double* src = xi.data.data() + i * hw;
        double sum = 0.0;
        for (size_t j = 0; j < hw; ++j) sum += src[j];
        out[i] = sum / static_cast<double>(hw);
    }
    return make_node({b, c}, std::move(out), {x}, [hw](TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.tracked()) return;
        ensure_grad(p);
        const double inv = 1.0 / static_cast<double>(hw);
        for (size_t i = 0; i < self.data.size(); ++i) {
            const double g = self.grad[i] * inv;
            double* dst = p.grad.data() + i * hw;
            for (size_t j = 0; j < hw; ++j) dst[j] += g;
        }
    });
}

Tensor add_bias_lastdim(const Tensor& x, const Tensor& bias) {
    const auto& xi = deref(x);
    const auto& bi = deref(bias);
    if (bi.shape.size() != 1 || bi.shape[0] != xi.shape.back())
        throw DimensionError("add_bias_lastdim: bias " + shape_str(bi.shape) +
                             " does not match last dim of " + shape_str(xi.shape));
    const int n = xi.shape.back();
    const size_t rows = xi.numel() / n;
    std::vector<double> out(xi.numel());
    for (size_t r = 0; r < rows; ++r)
        kernels::table().add(xi.data.data() + r * n, bi.data.data(), out.data() + r * n,
                             static_cast<size_t>(n));
    return make_node(std::vector<int>(xi.shape), std::move(out), {x, bias},
                     [n, rows](TensorImpl& self) {
                         auto& px = *self.parents[0];
                         auto& pb = *self.parents[1];
                         if (px.tracked()) {
                             ensure_grad(px);
                             kernels::table().acc(px.grad.data(), self.grad.data(),
                                                  self.grad.size());
                         }
                         if (pb.tracked()) {
                             ensure_grad(pb);
                             for (size_t r = 0; r < rows; ++r)
                                 kernels::table().acc(pb.grad.data(), self.grad.data() + r * n,
                                                      static_cast<size_t>(n));
                         }
                     });
}

Tensor sum_all(const Tensor& x) {
    const auto& xi = deref(x);
    double sum = 0.0;
    for (double v : xi.data) sum += v;
    return make_node({1}, {sum}, {x}, [](TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.tracked()) return;
        ensure_grad(p);
        const double g = self.grad[0];
        for (double& v : p.grad) v += g;
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const auto& li = deref(logits);
    if (li.shape.size() != 2)
        throw DimensionError("cross_entropy: logits must be (batch, classes), got " +
                             shape_str(li.shape));
    const int b = li.shape[0], c = li.shape[1];
    if (static_cast<int>(labels.size()) != b)
        throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
    for (int i = 0; i < b; ++i)
        if (labels[i] < 0 || labels[i] >= c)
            throw InputError("cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range [0," + std::to_string(c) + ")");

    // Cache softmax probabilities for the gradient.
    auto probs = std::make_shared<std::vector<double>>(li.numel());
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* row = li.data.data() + static_cast<size_t>(i) * c;
        double* prow = probs->data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 0; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < c; ++j) prow[j] *= inv;
        loss += (mx + std::log(sum)) - row[labels[i]];
    }
    loss /= static_cast<double>(b);

    return make_node({1}, {loss}, {logits}, [b, c, labels, probs](TensorImpl& self) {
        auto& p = *self.parents[0];
        if (!p.tracked()) return;
        ensure_grad(p);
        const double g = self.grad[0] / static_cast<double>(b);
        for (int i = 0; i < b; ++i) {
            const double* prow = probs->data() + static_cast<size_t>(i) * c;
            double* drow = p.grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) drow[j] += g * (prow[j] - (j == labels[i] ? 1.0 : 0.0));
        }
    });
}

}  // namespace mla
