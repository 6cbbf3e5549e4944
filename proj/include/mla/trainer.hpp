#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mla/datagen.hpp"
#include "mla/model.hpp"
#include "mla/tensor.hpp"

namespace mla {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 0.001;
    double momentum = 0.9;
    double decay_factor = 0.1;
    int decay_epoch = 0;  // 0 means floor(0.8 * epochs)
    uint64_t seed = 0;
    bool shuffle = true;
    double weight_decay = 0.0;  // off unless requested
    double grad_clip = 0.0;     // global-norm clip; off unless requested

    // auto mode decays at 80% of the run; never before epoch 1
    int resolved_decay_epoch() const {
        return decay_epoch > 0 ? decay_epoch : std::max(1, epochs * 8 / 10);
    }
    double lr_at_epoch(int epoch) const;  // epoch is 1-based
    void validate() const;
};

void train_config_to_json(const TrainConfig& cfg, nlohmann::ordered_json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double lr_in_effect = 0.0;
    double wall_time = 0.0;  // in-memory only; not serialized, to keep logs byte-stable
};

// v <- momentum * v + grad; p <- p - lr * v. Velocity entries are matched to
// params by position and must be pre-sized or empty (first call sizes them).
struct SgdState {
    std::vector<std::vector<double>> velocity;
};

void sgd_step(std::vector<Tensor>& params, double lr, double momentum, SgdState& state,
              double weight_decay = 0.0, double grad_clip = 0.0);

// forbidden_domain >= 0 makes train() throw if any batch touches that domain;
// the leave-one-domain-out driver uses it as a leak tripwire.
std::vector<EpochLog> train(MultiLevelAttentionNet& net, const DomainDataset& data,
                            const TrainConfig& cfg, int forbidden_domain = -1);

double evaluate(const MultiLevelAttentionNet& net, const DomainDataset& data);

// One JSON object per line: epoch, mean_loss, train_accuracy, lr_in_effect.
void write_train_log(const std::vector<EpochLog>& logs, const std::string& path);

}  // namespace mla
