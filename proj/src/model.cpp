#include "mla/model.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mla/errors.hpp"
#include "mla/tensor_io.hpp"

namespace fs = std::filesystem;

namespace mla {

void ModelConfig::validate() const {
    if (in_channels <= 0 || in_height <= 0 || in_width <= 0)
        throw ConfigError("model: input dims must be positive");
    if (stem_channels <= 0) throw ConfigError("model: stem_channels must be positive");
    if (blocks.empty()) throw ConfigError("model: at least one backbone block required");
    for (const auto& b : blocks)
        if (b.out_channels <= 0 || b.stride <= 0)
            throw ConfigError("model: block channels and stride must be positive");
    for (size_t i = 0; i < tap_ids.size(); ++i) {
        if (tap_ids[i] < 0 || tap_ids[i] >= static_cast<int>(blocks.size()))
            throw ConfigError("model: tap_id " + std::to_string(tap_ids[i]) +
                              " outside block range [0," + std::to_string(blocks.size()) + ")");
        if (i > 0 && tap_ids[i] <= tap_ids[i - 1])
            throw ConfigError("model: tap_ids must be strictly increasing");
    }
    if (!branches.empty() && branches.size() != tap_ids.size())
        throw ConfigError("model: " + std::to_string(branches.size()) + " branch configs for " +
                          std::to_string(tap_ids.size()) + " taps");
    if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
}

std::vector<BranchConfig> ModelConfig::resolved_branches() const {
    std::vector<BranchConfig> out;
    for (size_t i = 0; i < tap_ids.size(); ++i) {
        BranchConfig bc = branches.empty() ? BranchConfig{} : branches[i];
        bc.tap_id = tap_ids[i];
        bc.validate();
        out.push_back(bc);
    }
    return out;
}

namespace {

nlohmann::ordered_json branch_to_json(const BranchConfig& bc) {
    return {{"d_embed", bc.d_embed},
            {"n_heads", bc.n_heads},
            {"d_k", bc.d_k},
            {"d_mlp_hidden", bc.d_mlp_hidden},
            {"d_out", bc.d_out}};
}

BranchConfig branch_from_json(const nlohmann::json& j) {
    BranchConfig bc;
    bc.d_embed = j.value("d_embed", bc.d_embed);
    bc.n_heads = j.value("n_heads", bc.n_heads);
    bc.d_k = j.value("d_k", bc.d_k);
    bc.d_mlp_hidden = j.value("d_mlp_hidden", bc.d_mlp_hidden);
    bc.d_out = j.value("d_out", bc.d_out);
    return bc;
}

}  // namespace

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["input"] = {cfg.in_channels, cfg.in_height, cfg.in_width};
    j["stem_channels"] = cfg.stem_channels;
    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const auto& b : cfg.blocks) blocks.push_back({b.out_channels, b.stride});
    j["blocks"] = std::move(blocks);
    j["tap_ids"] = cfg.tap_ids;
    nlohmann::ordered_json brs = nlohmann::ordered_json::array();
    for (const auto& bc : cfg.resolved_branches()) brs.push_back(branch_to_json(bc));
    j["branches"] = std::move(brs);
    j["n_classes"] = cfg.n_classes;
    j["seed"] = cfg.seed;
    j["precision"] = cfg.precision == Dtype::f32 ? "f32" : "f64";
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    if (j.contains("input")) {
        const auto& in = j.at("input");
        if (!in.is_array() || in.size() != 3)
            throw ConfigError("model config: input must be [channels, height, width]");
        cfg.in_channels = in[0].get<int>();
        cfg.in_height = in[1].get<int>();
        cfg.in_width = in[2].get<int>();
    }
    cfg.stem_channels = j.value("stem_channels", cfg.stem_channels);
    if (j.contains("blocks")) {
        cfg.blocks.clear();
        for (const auto& b : j.at("blocks"))
            cfg.blocks.push_back({b.at(0).get<int>(), b.at(1).get<int>()});
    }
    if (j.contains("tap_ids")) cfg.tap_ids = j.at("tap_ids").get<std::vector<int>>();
    if (j.contains("branches")) {
        cfg.branches.clear();
        const auto& brs = j.at("branches");
        if (brs.is_object()) {
            for (size_t i = 0; i < cfg.tap_ids.size(); ++i)
                cfg.branches.push_back(branch_from_json(brs));
        } else {
            for (const auto& b : brs) cfg.branches.push_back(branch_from_json(b));
        }
    }
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("precision")) {
        const std::string p = j.at("precision").get<std::string>();
        if (p == "f32")
            cfg.precision = Dtype::f32;
        else if (p == "f64")
            cfg.precision = Dtype::f64;
        else
            throw ConfigError("model config: precision must be f32 or f64");
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------

MultiLevelAttentionNet::MultiLevelAttentionNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    set_default_dtype(cfg_.precision);
    Rng rng(cfg_.seed);

    stem = Conv2d(cfg_.in_channels, cfg_.stem_channels, 3, 3, 1, 1, rng);
    int ch = cfg_.stem_channels;
    int h = cfg_.in_height, w = cfg_.in_width;  // stem is stride-1, padding-1
    std::vector<int> block_h, block_w, block_c;
    blocks.clear();
    for (const auto& bs : cfg_.blocks) {
        blocks.emplace_back(ch, bs.out_channels, bs.stride, rng);
        ch = bs.out_channels;
        h = conv_out_extent(h, 3, bs.stride, 1);
        w = conv_out_extent(w, 3, bs.stride, 1);
        if (h < 1 || w < 1) throw ConfigError("model: spatial extent vanished in backbone");
        block_c.push_back(ch);
        block_h.push_back(h);
        block_w.push_back(w);
    }

    const auto branch_cfgs = cfg_.resolved_branches();
    int branch_width = 0;
    branches.clear();
    for (size_t t = 0; t < cfg_.tap_ids.size(); ++t) {
        const int tap = cfg_.tap_ids[t];
        branches.emplace_back(branch_cfgs[t], block_h[tap] * block_w[tap], rng);
        branch_width += block_c[tap] * branch_cfgs[t].d_out;
    }

    const int in_dim = branch_width + block_c.back();
    classifier = Linear(in_dim, cfg_.n_classes, rng);
    if (classifier.in_dim() != in_dim)
        throw ConfigError("model: classifier width mismatch");  // unreachable by construction
}

int MultiLevelAttentionNet::final_channels() const { return cfg_.blocks.back().out_channels; }

Tensor MultiLevelAttentionNet::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.in_height ||
        x.dim(3) != cfg_.in_width)
        throw DimensionError("forward: input " + shape_str(x.shape()) + " does not match config (" +
                             std::to_string(cfg_.in_channels) + "," +
                             std::to_string(cfg_.in_height) + "," + std::to_string(cfg_.in_width) +
                             ")");
    Tensor h = gelu(stem.forward(x));
    std::vector<Tensor> pieces;
    size_t next_tap = 0;
    for (size_t i = 0; i < blocks.size(); ++i) {
        h = blocks[i].forward(h);
        if (next_tap < cfg_.tap_ids.size() && cfg_.tap_ids[next_tap] == static_cast<int>(i)) {
            pieces.push_back(branch_forward(h, branches[next_tap]));
            ++next_tap;
        }
    }
    pieces.push_back(mean_spatial(h));
    return classifier.forward(pieces.size() == 1 ? pieces[0] : concat_lastdim(pieces));
}

std::vector<std::pair<std::string, Tensor>> MultiLevelAttentionNet::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> ps;
    ps.emplace_back("stem.weight", stem.weight);
    ps.emplace_back("stem.bias", stem.bias);
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string base = "block" + std::to_string(i) + ".";
        ps.emplace_back(base + "conv1.weight", blocks[i].conv1.weight);
        ps.emplace_back(base + "conv1.bias", blocks[i].conv1.bias);
        ps.emplace_back(base + "conv2.weight", blocks[i].conv2.weight);
        ps.emplace_back(base + "conv2.bias", blocks[i].conv2.bias);
        if (blocks[i].proj) {
            ps.emplace_back(base + "proj.weight", blocks[i].proj->weight);
            ps.emplace_back(base + "proj.bias", blocks[i].proj->bias);
        }
    }
    for (size_t t = 0; t < branches.size(); ++t) {
        const std::string base = "branch." + std::to_string(cfg_.tap_ids[t]) + ".";
        for (auto& [name, p] : branches[t].named_parameters()) ps.emplace_back(base + name, p);
    }
    ps.emplace_back("classifier.weight", classifier.weight);
    ps.emplace_back("classifier.bias", classifier.bias);
    return ps;
}

std::vector<Tensor> MultiLevelAttentionNet::parameters() const {
    std::vector<Tensor> ps;
    for (auto& [name, p] : named_parameters()) ps.push_back(p);
    return ps;
}

int64_t MultiLevelAttentionNet::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += static_cast<int64_t>(p.numel());
    return n;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const MultiLevelAttentionNet& net, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path weights_tmp = fs::path(dir) / "weights.mlt1.tmp";
    const fs::path weights_path = fs::path(dir) / "weights.mlt1";
    const fs::path manifest_tmp = fs::path(dir) / "manifest.json.tmp";
    const fs::path manifest_path = fs::path(dir) / "manifest.json";

    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    {
        std::ofstream out(weights_tmp, std::ios::binary);
        if (!out) throw IoError("cannot open for write: " + weights_tmp.string());
        for (const auto& [name, p] : net.named_parameters()) {
            const auto offset = static_cast<uint64_t>(out.tellp());
            write_mlt1(out, p);
            nlohmann::ordered_json entry;
            entry["name"] = name;
            entry["dtype"] = p.dtype() == Dtype::f32 ? "f32" : "f64";
            entry["shape"] = p.shape();
            entry["offset"] = offset;
            entry["bytes"] = static_cast<uint64_t>(out.tellp()) - offset;
            index.push_back(std::move(entry));
        }
        if (!out) throw IoError("write failed: " + weights_tmp.string());
    }

    nlohmann::ordered_json manifest;
    manifest["format"] = "mla-checkpoint-v1";
    manifest["config"] = model_config_to_json(net.config());
    manifest["tensors"] = std::move(index);
    {
        std::ofstream out(manifest_tmp, std::ios::binary);
        if (!out) throw IoError("cannot open for write: " + manifest_tmp.string());
        out << manifest.dump(2) << "\n";
        if (!out) throw IoError("write failed: " + manifest_tmp.string());
    }

    fs::rename(weights_tmp, weights_path);
    fs::rename(manifest_tmp, manifest_path);
}

MultiLevelAttentionNet load_checkpoint(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    const fs::path weights_path = fs::path(dir) / "weights.mlt1";
    std::ifstream min(manifest_path);
    if (!min) throw IoError("checkpoint manifest missing: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        min >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "mla-checkpoint-v1")
        throw FormatError("checkpoint: unknown format tag");

    ModelConfig cfg = model_config_from_json(manifest.at("config"));
    MultiLevelAttentionNet net(cfg);

    std::ifstream win(weights_path, std::ios::binary);
    if (!win) throw IoError("checkpoint weights missing: " + weights_path.string());

    auto named = net.named_parameters();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != named.size())
        throw ConfigError("checkpoint: has " + std::to_string(tensors.size()) +
                          " tensors, model needs " + std::to_string(named.size()));
    for (size_t i = 0; i < named.size(); ++i) {
        const auto& entry = tensors[i];
        if (entry.at("name").get<std::string>() != named[i].first)
            throw ConfigError("checkpoint: tensor " + std::to_string(i) + " is '" +
                              entry.at("name").get<std::string>() + "', expected '" +
                              named[i].first + "'");
        win.seekg(static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
        Tensor loaded = read_mlt1(win);
        if (loaded.shape() != named[i].second.shape())
            throw ConfigError("checkpoint: shape of '" + named[i].first + "' is " +
                              shape_str(loaded.shape()) + ", model expects " +
                              shape_str(named[i].second.shape()));
        auto dst = named[i].second.mutable_data();
        auto src = loaded.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return net;
}

}  // namespace mla
