#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mla/model.hpp"
#include "mla/tensor.hpp"

namespace mla {

enum class SaliencyObjective { loss, score };  // cross-entropy vs raw class logit
enum class ChannelReduce { max, mean };

struct SaliencyMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // per-pixel |d objective / d input|, channel-reduced
    int class_used = 0;
    double raw_min = 0.0;
    double raw_max = 0.0;
};

// image is (3,H,W) or (1,3,H,W), already normalized like training input.
// Model weights are left untouched; only the input gradient is consumed.
SaliencyMap compute_saliency(const MultiLevelAttentionNet& net, const Tensor& image,
                             int class_label, SaliencyObjective objective = SaliencyObjective::loss,
                             ChannelReduce reduce = ChannelReduce::max);

// Binary PGM, dark = salient: pixel = 255 - round(255 * (v - min) / (max - min));
// a constant map renders all white.
std::vector<uint8_t> render_pgm(const SaliencyMap& map);
void write_pgm(const SaliencyMap& map, const std::string& path);

}  // namespace mla
