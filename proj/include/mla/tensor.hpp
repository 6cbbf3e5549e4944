#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mla/errors.hpp"

namespace mla {

// Storage precision of tensor payloads. Arithmetic always runs in f64 and
// reductions always accumulate in f64; f32 mode rounds each stored element
// to float precision so training state is exactly representable in 32 bits
// (checkpoints then round-trip bit-exactly through f32 payloads).
enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

Dtype default_dtype();
void set_default_dtype(Dtype d);

struct TensorImpl;

// Dense row-major n-d array with an optional gradient buffer and autodiff
// lineage. Copying a Tensor copies a handle; the payload is shared.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data, Dtype dt);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int rank() const;
    int dim(int i) const;  // negative i counts from the back
    size_t numel() const;
    Dtype dtype() const;
    int64_t node_id() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();  // for leaf parameter updates
    double value() const;              // scalar tensors only

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches this node
    Dtype dtype = Dtype::f64;
    bool requires_grad = false;
    int64_t node_id = -1;  // construction order; backward replays it in reverse
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    size_t numel() const { return data.size(); }
    bool leaf() const { return parents.empty(); }
    bool tracked() const { return requires_grad || !parents.empty(); }
};

// --- graph construction helpers (used by nn/attention composites too) ---

// Wraps freshly computed data as a graph node. If any input is tracked the
// node records lineage and `bw`; otherwise it is a plain constant.
Tensor make_node(std::vector<int> shape, std::vector<double> data,
                 const std::vector<Tensor>& inputs,
                 std::function<void(TensorImpl&)> bw);

void ensure_grad(TensorImpl& t);
std::string shape_str(const std::vector<int>& shape);
size_t shape_numel(const std::vector<int>& shape);

// --- operations (all register gradients when inputs are tracked) ---

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double alpha);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, std::vector<int> new_shape);
Tensor flatten(const Tensor& x);  // (d0, rest...) -> (d0, prod(rest))
Tensor transpose_last2(const Tensor& x);
Tensor mean_spatial(const Tensor& x);  // (b,c,h,w) -> (b,c)
Tensor add_bias_lastdim(const Tensor& x, const Tensor& bias);
Tensor sum_all(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Reverse-mode sweep from a scalar loss. Visits reachable nodes in reverse
// construction order exactly once. Leaf gradients accumulate across calls;
// interior gradients are per-call scratch.
void backward(const Tensor& loss);

void zero_grads(const std::vector<Tensor>& params);

}  // namespace mla
