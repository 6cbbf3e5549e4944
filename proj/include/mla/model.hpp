#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mla/attention.hpp"
#include "mla/nn.hpp"
#include "mla/tensor.hpp"

namespace mla {

struct BlockSpec {
    int out_channels = 0;
    int stride = 1;
};

struct ModelConfig {
    int in_channels = 3;
    int in_height = 32;
    int in_width = 32;
    int stem_channels = 16;
    std::vector<BlockSpec> blocks{{16, 1}, {16, 1}, {32, 2}, {32, 1}, {64, 2}, {64, 1}};
    std::vector<int> tap_ids{1, 3, 5};   // indices into blocks, strictly increasing
    std::vector<BranchConfig> branches;  // one per tap; empty = default BranchConfig per tap
    int n_classes = 5;
    uint64_t seed = 0;
    Dtype precision = Dtype::f64;

    void validate() const;
    // Branch configs aligned with tap_ids (fills defaults, sets tap_id).
    std::vector<BranchConfig> resolved_branches() const;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Tappable micro-residual backbone with per-tap attention branches and a
// concatenation classifier over [branch embeddings..., pooled final map].
class MultiLevelAttentionNet {
public:
    explicit MultiLevelAttentionNet(const ModelConfig& cfg);

    Tensor forward(const Tensor& x) const;  // (b,in_c,H,W) -> (b,n_classes)

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    int64_t parameter_count() const;

    const ModelConfig& config() const { return cfg_; }
    int classifier_in_dim() const { return classifier.in_dim(); }
    int final_channels() const;

    Conv2d stem;
    std::vector<ResidualBlock> blocks;
    std::vector<AttentionBranch> branches;  // aligned with cfg.tap_ids order
    Linear classifier;

private:
    ModelConfig cfg_;
};

// Checkpoint directory: manifest.json (config echo + tensor index) and
// weights.mlt1 (concatenated MLT1 records). Files are written to temporary
// names and renamed into place.
void save_checkpoint(const MultiLevelAttentionNet& net, const std::string& dir);
MultiLevelAttentionNet load_checkpoint(const std::string& dir);

}  // namespace mla
