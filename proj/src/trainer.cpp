#include "mla/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mla/errors.hpp"
#include "mla/rng.hpp"

namespace mla {

double TrainConfig::lr_at_epoch(int epoch) const {
    return epoch >= resolved_decay_epoch() ? lr * decay_factor : lr;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
    if (epochs > 0) {
        int de = resolved_decay_epoch();
        if (de < 1 || de > epochs)
            throw ConfigError("decay_epoch " + std::to_string(de) + " outside [1, " +
                              std::to_string(epochs) + "]");
    }
}

void train_config_to_json(const TrainConfig& cfg, nlohmann::ordered_json& j) {
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["momentum"] = cfg.momentum;
    j["decay_factor"] = cfg.decay_factor;
    j["decay_epoch"] = cfg.decay_epoch;
    j["seed"] = cfg.seed;
    j["shuffle"] = cfg.shuffle;
    j["weight_decay"] = cfg.weight_decay;
    j["grad_clip"] = cfg.grad_clip;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "epochs") cfg.epochs = value.get<int>();
        else if (key == "batch_size") cfg.batch_size = value.get<int>();
        else if (key == "lr") cfg.lr = value.get<double>();
        else if (key == "momentum") cfg.momentum = value.get<double>();
        else if (key == "decay_factor") cfg.decay_factor = value.get<double>();
        else if (key == "decay_epoch") cfg.decay_epoch = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<uint64_t>();
        else if (key == "shuffle") cfg.shuffle = value.get<bool>();
        else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
        else if (key == "grad_clip") cfg.grad_clip = value.get<double>();
        else throw ConfigError("unknown train config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

namespace {

int argmax_row(const double* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;  // ties keep the lowest index
    return best;
}

size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const int k = logits.dim(-1);
    const double* d = logits.data().data();
    size_t correct = 0;
    for (size_t b = 0; b < labels.size(); ++b)
        if (argmax_row(d + b * static_cast<size_t>(k), k) == labels[b]) ++correct;
    return correct;
}

}  // namespace

void sgd_step(std::vector<Tensor>& params, double lr, double momentum, SgdState& state,
              double weight_decay, double grad_clip) {
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i].numel(), 0.0);
    }
    if (state.velocity.size() != params.size())
        throw DimensionError("sgd state does not match parameter list");

    double clip_scale = 1.0;
    if (grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& p : params)
            for (double g : p.grad()) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > grad_clip) clip_scale = grad_clip / norm;
    }

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<double>& v = state.velocity[pi];
        if (v.size() != p.numel()) throw DimensionError("sgd velocity shape mismatch");
        std::span<const double> g = p.grad();
        std::span<double> w = p.mutable_data();
        const bool narrow = p.dtype() == Dtype::f32;  // stored weights stay at their dtype
        for (size_t i = 0; i < v.size(); ++i) {
            double gi = g[i] * clip_scale + weight_decay * w[i];
            v[i] = momentum * v[i] + gi;
            w[i] -= lr * v[i];
            if (narrow) w[i] = static_cast<double>(static_cast<float>(w[i]));
        }
    }
}

std::vector<EpochLog> train(MultiLevelAttentionNet& net, const DomainDataset& data,
                            const TrainConfig& cfg, int forbidden_domain) {
    cfg.validate();
    std::vector<EpochLog> logs;
    if (cfg.epochs == 0) return logs;
    if (data.samples.empty()) throw InputError("training set is empty");

    const int n = static_cast<int>(data.samples.size());
    std::vector<Tensor> params = net.parameters();
    SgdState state;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng(cfg.seed).fork(0x5u);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        if (cfg.shuffle) {
            for (int i = n - 1; i > 0; --i) {
                int j = static_cast<int>(shuffle_rng.below(static_cast<uint64_t>(i) + 1));
                std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
            }
        }
        const double lr_e = cfg.lr_at_epoch(epoch);
        double loss_sum = 0.0;
        size_t correct = 0;
        int step = 0;

        for (int start = 0; start < n; start += cfg.batch_size) {
            ++step;
            int end = std::min(start + cfg.batch_size, n);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            if (forbidden_domain >= 0)
                for (int idx : batch)
                    if (data.samples[static_cast<size_t>(idx)].domain_label == forbidden_domain)
                        throw InputError("held-out domain " + std::to_string(forbidden_domain) +
                                         " reached the training loop (epoch " +
                                         std::to_string(epoch) + ", step " +
                                         std::to_string(step) + ")");

            Tensor x = batch_tensor(data, batch);
            std::vector<int> labels = batch_labels(data, batch);
            Tensor logits = net.forward(x);
            Tensor loss = cross_entropy(logits, labels);
            double lv = loss.value();
            if (!std::isfinite(lv))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
            loss_sum += lv * static_cast<double>(batch.size());
            correct += count_correct(logits, labels);

            zero_grads(params);
            backward(loss);
            sgd_step(params, lr_e, cfg.momentum, state, cfg.weight_decay, cfg.grad_clip);
        }

        std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        logs.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n, lr_e, dt.count()});
    }
    return logs;
}

double evaluate(const MultiLevelAttentionNet& net, const DomainDataset& data) {
    if (data.samples.empty()) throw InputError("evaluation set is empty");
    const int n = static_cast<int>(data.samples.size());
    size_t correct = 0;
    for (int start = 0; start < n; start += 32) {
        int end = std::min(start + 32, n);
        std::vector<int> batch(static_cast<size_t>(end - start));
        std::iota(batch.begin(), batch.end(), start);
        Tensor logits = net.forward(batch_tensor(data, batch));
        correct += count_correct(logits, batch_labels(data, batch));
    }
    return static_cast<double>(correct) / n;
}

void write_train_log(const std::vector<EpochLog>& logs, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& e : logs) {
        nlohmann::ordered_json j;
        j["epoch"] = e.epoch;
        j["mean_loss"] = e.mean_loss;
        j["train_accuracy"] = e.train_accuracy;
        j["lr_in_effect"] = e.lr_in_effect;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace mla
