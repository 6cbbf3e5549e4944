#include "mla/saliency.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <span>

#include "mla/errors.hpp"

namespace mla {

SaliencyMap compute_saliency(const MultiLevelAttentionNet& net, const Tensor& image,
                             int class_label, SaliencyObjective objective, ChannelReduce reduce) {
    const ModelConfig& cfg = net.config();
    Tensor x = image;
    if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.rank() != 4 || x.dim(0) != 1)
        throw DimensionError("saliency expects a single image, got shape " +
                             shape_str(image.shape()));
    if (x.dim(1) != cfg.in_channels || x.dim(2) != cfg.in_height || x.dim(3) != cfg.in_width)
        throw DimensionError("image shape " + shape_str(image.shape()) +
                             " does not match model input");
    if (class_label < 0 || class_label >= cfg.n_classes)
        throw InputError("class label " + std::to_string(class_label) + " out of range [0, " +
                         std::to_string(cfg.n_classes) + ")");

    // Fresh leaf so the caller's tensor keeps no gradient state.
    std::vector<double> copy(x.data().begin(), x.data().end());
    Tensor input = Tensor::from_data(x.shape(), std::move(copy));
    input.set_requires_grad(true);

    Tensor logits = net.forward(input);
    Tensor obj;
    if (objective == SaliencyObjective::loss) {
        obj = cross_entropy(logits, {class_label});
    } else {
        std::vector<double> onehot(static_cast<size_t>(cfg.n_classes), 0.0);
        onehot[static_cast<size_t>(class_label)] = 1.0;
        Tensor mask = Tensor::from_data({1, cfg.n_classes}, std::move(onehot));
        obj = sum_all(mul(logits, mask));
    }
    backward(obj);

    const int h = cfg.in_height;
    const int w = cfg.in_width;
    const int hw = h * w;
    std::span<const double> g = input.grad();

    SaliencyMap map;
    map.height = h;
    map.width = w;
    map.class_used = class_label;
    map.values.resize(static_cast<size_t>(hw));
    for (int p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (int c = 0; c < cfg.in_channels; ++c) {
            double a = std::fabs(g[static_cast<size_t>(c) * hw + p]);
            if (reduce == ChannelReduce::max) acc = std::max(acc, a);
            else acc += a;
        }
        if (reduce == ChannelReduce::mean) acc /= cfg.in_channels;
        map.values[static_cast<size_t>(p)] = acc;
    }
    map.raw_min = map.values[0];
    map.raw_max = map.values[0];
    for (double v : map.values) {
        map.raw_min = std::min(map.raw_min, v);
        map.raw_max = std::max(map.raw_max, v);
    }
    return map;
}

std::vector<uint8_t> render_pgm(const SaliencyMap& map) {
    if (map.height <= 0 || map.width <= 0 || map.values.size() !=
        static_cast<size_t>(map.height) * static_cast<size_t>(map.width))
        throw DimensionError("saliency map dims do not match its value count");

    std::string header = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) +
                         "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + map.values.size());

    const double lo = map.raw_min;
    const double hi = map.raw_max;
    const double span = hi - lo;
    for (double v : map.values) {
        long pixel = 255;
        if (span > 0.0) pixel = 255 - std::lround(255.0 * (v - lo) / span);
        out.push_back(static_cast<uint8_t>(pixel));
    }
    return out;
}

void write_pgm(const SaliencyMap& map, const std::string& path) {
    std::vector<uint8_t> bytes = render_pgm(map);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace mla
