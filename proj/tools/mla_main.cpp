// Command-line front end: datagen | train | experiment | saliency.
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mla/datagen.hpp"
#include "mla/errors.hpp"
#include "mla/model.hpp"
#include "mla/protocol.hpp"
#include "mla/saliency.hpp"
#include "mla/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw mla::IoError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw mla::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw mla::ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "model" && key != "train" && key != "experiment" && key != "data")
            throw mla::ConfigError("unknown config section '" + key + "'");
    }
    return j;
}

// Run directories are append-only; refuse to reuse a non-empty one unless
// --force is given.
void prepare_run_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir))
            throw mla::IoError("'" + dir.string() + "' exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw mla::IoError("run directory '" + dir.string() +
                               "' is not empty; pass --force to write into it");
    }
    fs::create_directories(dir);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw mla::IoError("cannot open '" + p.string() + "' for writing");
    out << text;
    if (!out) throw mla::IoError("short write to '" + p.string() + "'");
}

struct DatagenArgs {
    std::string out, config;
    std::optional<int> classes, domains, per_cell, size;
    std::optional<uint64_t> seed;
    std::optional<double> spurious;
};

mla::SynthSpec resolve_synth_spec(const DatagenArgs& a, const json& file) {
    mla::SynthSpec spec;
    if (file.contains("data")) {
        const json& d = file["data"];
        if (!d.is_object()) throw mla::ConfigError("'data' section must be an object");
        for (const auto& [key, value] : d.items()) {
            if (key == "classes") spec.n_classes = value.get<int>();
            else if (key == "domains") spec.domains = mla::default_styles(value.get<int>());
            else if (key == "per_cell") spec.samples_per_domain_per_class = value.get<int>();
            else if (key == "size") spec.image_size = value.get<int>();
            else if (key == "seed") spec.seed = value.get<uint64_t>();
            else if (key == "spurious") spec.spurious_strength = value.get<double>();
            else throw mla::ConfigError("unknown data config key '" + key + "'");
        }
    }
    if (a.classes) spec.n_classes = *a.classes;
    if (a.domains) spec.domains = mla::default_styles(*a.domains);
    if (a.per_cell) spec.samples_per_domain_per_class = *a.per_cell;
    if (a.size) spec.image_size = *a.size;
    if (a.seed) spec.seed = *a.seed;
    if (a.spurious) spec.spurious_strength = *a.spurious;
    if (spec.domains.empty()) spec.domains = mla::default_styles(4);
    return spec;
}

ordered_json synth_spec_json(const mla::SynthSpec& spec) {
    ordered_json j;
    j["classes"] = spec.n_classes;
    j["domains"] = static_cast<int>(spec.domains.size());
    j["per_cell"] = spec.samples_per_domain_per_class;
    j["size"] = spec.image_size;
    j["seed"] = spec.seed;
    j["spurious"] = spec.spurious_strength;
    return j;
}

int cmd_datagen(const DatagenArgs& a) {
    mla::SynthSpec spec = resolve_synth_spec(a, load_config_file(a.config));
    mla::DomainDataset ds = mla::generate(spec);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    mla::save_dataset(ds, a.out);
    std::cout << "resolved data config: " << synth_spec_json(spec).dump() << "\n";
    std::cout << "wrote " << ds.samples.size() << " samples (" << ds.n_classes << " classes, "
              << ds.n_domains << " domains, " << ds.height << "x" << ds.width << ") to " << a.out
              << "\n";
    return 0;
}

struct TrainOverrides {
    std::optional<int> epochs, batch_size, decay_epoch;
    std::optional<double> lr, momentum, decay_factor, weight_decay, grad_clip;
    std::optional<uint64_t> seed;
    bool no_shuffle = false;
};

void apply_train_overrides(mla::TrainConfig& cfg, const TrainOverrides& o) {
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.decay_epoch) cfg.decay_epoch = *o.decay_epoch;
    if (o.lr) cfg.lr = *o.lr;
    if (o.momentum) cfg.momentum = *o.momentum;
    if (o.decay_factor) cfg.decay_factor = *o.decay_factor;
    if (o.weight_decay) cfg.weight_decay = *o.weight_decay;
    if (o.grad_clip) cfg.grad_clip = *o.grad_clip;
    if (o.seed) cfg.seed = *o.seed;
    if (o.no_shuffle) cfg.shuffle = false;
}

mla::ModelConfig resolve_model_config(const json& file, const std::string& precision,
                                      const mla::DomainDataset& ds) {
    mla::ModelConfig mc;
    if (file.contains("model")) mc = mla::model_config_from_json(file["model"]);
    if (!precision.empty()) {
        if (precision == "f32") mc.precision = mla::Dtype::f32;
        else if (precision == "f64") mc.precision = mla::Dtype::f64;
        else throw mla::ConfigError("precision must be f32 or f64, got '" + precision + "'");
    }
    mc.in_channels = 3;
    mc.in_height = ds.height;
    mc.in_width = ds.width;
    mc.n_classes = ds.n_classes;
    return mc;
}

struct TrainArgs {
    std::string data, out, config, holdout, precision;
    TrainOverrides over;
    bool force = false;
};

int cmd_train(const TrainArgs& a) {
    json file = load_config_file(a.config);
    mla::DomainDataset full = mla::load_dataset(a.data);

    mla::ModelConfig mc = resolve_model_config(file, a.precision, full);
    mla::TrainConfig tc;
    if (file.contains("train")) tc = mla::train_config_from_json(file["train"]);
    apply_train_overrides(tc, a.over);
    if (a.over.seed) mc.seed = *a.over.seed;
    mc.validate();
    tc.validate();

    mla::DomainDataset train_ds = full;
    mla::DomainDataset test_ds;
    int forbidden = -1;
    if (!a.holdout.empty()) {
        forbidden = full.domain_index(a.holdout);
        auto split = mla::split_leave_one_out(full, a.holdout);
        train_ds = std::move(split.first);
        test_ds = std::move(split.second);
    }

    prepare_run_dir(a.out, a.force);
    ordered_json echo;
    echo["data"] = {{"path", a.data}, {"holdout", a.holdout}};
    echo["model"] = mla::model_config_to_json(mc);
    ordered_json tj;
    mla::train_config_to_json(tc, tj);
    echo["train"] = tj;
    write_text(fs::path(a.out) / "config.json", echo.dump(2) + "\n");

    mla::MultiLevelAttentionNet net(mc);
    std::vector<mla::EpochLog> logs = mla::train(net, train_ds, tc, forbidden);
    mla::write_train_log(logs, (fs::path(a.out) / "train_log.jsonl").string());
    mla::save_checkpoint(net, (fs::path(a.out) / "checkpoint").string());

    ordered_json metrics;
    metrics["epochs_run"] = logs.size();
    metrics["final_train_accuracy"] = logs.empty() ? 0.0 : logs.back().train_accuracy;
    metrics["final_mean_loss"] = logs.empty() ? 0.0 : logs.back().mean_loss;
    if (!a.holdout.empty()) {
        metrics["holdout_domain"] = a.holdout;
        metrics["holdout_accuracy"] = mla::evaluate(net, test_ds);
    }
    write_text(fs::path(a.out) / "metrics.json", metrics.dump(2) + "\n");

    std::cout << "trained " << logs.size() << " epoch(s); final train accuracy "
              << metrics["final_train_accuracy"].dump() << ", mean loss "
              << metrics["final_mean_loss"].dump() << "\n";
    if (!a.holdout.empty())
        std::cout << "held-out '" << a.holdout << "' accuracy "
                  << metrics["holdout_accuracy"].dump() << "\n";
    std::cout << "artifacts in " << a.out << "\n";
    return 0;
}

struct ExperimentArgs {
    std::string data, out, config, precision;
    std::vector<uint64_t> seeds;
    std::vector<std::string> variants;
    TrainOverrides over;
    bool force = false;
};

int cmd_experiment(const ExperimentArgs& a) {
    json file = load_config_file(a.config);
    mla::DomainDataset ds = mla::load_dataset(a.data);

    mla::ExperimentConfig ec;
    if (file.contains("experiment")) ec = mla::experiment_config_from_json(file["experiment"]);
    ec.model = resolve_model_config(file, a.precision, ds);
    if (file.contains("train")) ec.train = mla::train_config_from_json(file["train"]);
    apply_train_overrides(ec.train, a.over);
    if (!a.seeds.empty()) ec.seeds = a.seeds;
    if (!a.variants.empty()) ec.variants = a.variants;
    ec.validate();

    prepare_run_dir(a.out, a.force);
    ordered_json echo;
    echo["data"] = {{"path", a.data}};
    echo["model"] = mla::model_config_to_json(ec.model);
    ordered_json tj;
    mla::train_config_to_json(ec.train, tj);
    echo["train"] = tj;
    ordered_json ej;
    mla::experiment_config_to_json(ec, ej);
    echo["experiment"] = ej;
    write_text(fs::path(a.out) / "config.json", echo.dump(2) + "\n");

    mla::RunReport report = mla::run_experiment(ds, ec, a.out);
    std::cout << mla::render_text(report);
    std::cout << "report files in " << a.out << "\n";
    return 0;
}

struct SaliencyArgs {
    std::string checkpoint, data, out, objective = "loss", reduce = "max";
    std::vector<int> samples;
    std::optional<int> cls;
    bool force = false;
};

int cmd_saliency(const SaliencyArgs& a) {
    mla::MultiLevelAttentionNet net = mla::load_checkpoint(a.checkpoint);
    mla::DomainDataset ds = mla::load_dataset(a.data);

    mla::SaliencyObjective obj;
    if (a.objective == "loss") obj = mla::SaliencyObjective::loss;
    else if (a.objective == "score") obj = mla::SaliencyObjective::score;
    else throw mla::ConfigError("objective must be loss or score, got '" + a.objective + "'");
    mla::ChannelReduce red;
    if (a.reduce == "max") red = mla::ChannelReduce::max;
    else if (a.reduce == "mean") red = mla::ChannelReduce::mean;
    else throw mla::ConfigError("reduce must be max or mean, got '" + a.reduce + "'");

    prepare_run_dir(a.out, a.force);
    for (int idx : a.samples) {
        if (idx < 0 || static_cast<size_t>(idx) >= ds.samples.size())
            throw mla::InputError("sample index " + std::to_string(idx) + " out of range");
        mla::Tensor img = mla::batch_tensor(ds, {idx});
        int label = a.cls ? *a.cls : ds.samples[static_cast<size_t>(idx)].class_label;
        mla::SaliencyMap map = mla::compute_saliency(net, img, label, obj, red);

        std::string stem = "saliency_" + std::to_string(idx);
        mla::write_pgm(map, (fs::path(a.out) / (stem + ".pgm")).string());
        ordered_json side;
        side["sample"] = idx;
        side["class"] = label;
        side["objective"] = a.objective;
        side["reduce"] = a.reduce;
        side["height"] = map.height;
        side["width"] = map.width;
        side["raw_min"] = map.raw_min;
        side["raw_max"] = map.raw_max;
        write_text(fs::path(a.out) / (stem + ".json"), side.dump(2) + "\n");
        std::cout << stem << ".pgm class=" << label << " raw_min=" << ordered_json(map.raw_min).dump()
                  << " raw_max=" << ordered_json(map.raw_max).dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-level channel-attention CNN toolkit"};
    app.require_subcommand(1);

    DatagenArgs dg;
    CLI::App* datagen = app.add_subcommand("datagen", "generate a synthetic multi-domain dataset");
    datagen->add_option("--out", dg.out, "output MLDG1 file")->required();
    datagen->add_option("--config", dg.config, "JSON config file (data section)");
    datagen->add_option("--classes", dg.classes, "number of shape classes (2-5)");
    datagen->add_option("--domains", dg.domains, "number of domain styles");
    datagen->add_option("--per-cell", dg.per_cell, "samples per domain per class");
    datagen->add_option("--size", dg.size, "square image size in pixels (>= 16)");
    datagen->add_option("--seed", dg.seed, "generator seed");
    datagen->add_option("--spurious", dg.spurious, "spurious color-cue strength in [0,1]");

    TrainArgs tr;
    CLI::App* train = app.add_subcommand("train", "train one model on a dataset");
    train->add_option("--data", tr.data, "MLDG1 dataset path")->required();
    train->add_option("--out", tr.out, "run directory")->required();
    train->add_option("--config", tr.config, "JSON config file (model/train sections)");
    train->add_option("--holdout", tr.holdout, "domain to hold out (default: train on all)");
    train->add_option("--precision", tr.precision, "parameter precision: f32 or f64");
    train->add_flag("--force", tr.force, "write into a non-empty run directory");
    train->add_option("--epochs", tr.over.epochs, "training epochs");
    train->add_option("--batch-size", tr.over.batch_size, "batch size");
    train->add_option("--lr", tr.over.lr, "learning rate");
    train->add_option("--momentum", tr.over.momentum, "SGD momentum");
    train->add_option("--decay-epoch", tr.over.decay_epoch, "epoch the LR decay kicks in");
    train->add_option("--decay-factor", tr.over.decay_factor, "LR decay factor");
    train->add_option("--weight-decay", tr.over.weight_decay, "L2 weight decay");
    train->add_option("--grad-clip", tr.over.grad_clip, "global gradient-norm clip");
    train->add_option("--seed", tr.over.seed, "model init + shuffle seed");
    train->add_flag("--no-shuffle", tr.over.no_shuffle, "keep sample order fixed");

    ExperimentArgs ex;
    CLI::App* experiment =
        app.add_subcommand("experiment", "leave-one-domain-out grid over variants and seeds");
    experiment->add_option("--data", ex.data, "MLDG1 dataset path")->required();
    experiment->add_option("--out", ex.out, "experiment output directory")->required();
    experiment->add_option("--config", ex.config,
                           "JSON config file (model/train/experiment sections)");
    experiment->add_option("--precision", ex.precision, "parameter precision: f32 or f64");
    experiment->add_option("--seeds", ex.seeds, "seeds, comma separated")->delimiter(',');
    experiment->add_option("--variants", ex.variants, "variants, comma separated")->delimiter(',');
    experiment->add_flag("--force", ex.force, "write into a non-empty directory");
    experiment->add_option("--epochs", ex.over.epochs, "training epochs");
    experiment->add_option("--batch-size", ex.over.batch_size, "batch size");
    experiment->add_option("--lr", ex.over.lr, "learning rate");
    experiment->add_option("--momentum", ex.over.momentum, "SGD momentum");
    experiment->add_option("--decay-epoch", ex.over.decay_epoch, "epoch the LR decay kicks in");
    experiment->add_option("--decay-factor", ex.over.decay_factor, "LR decay factor");
    experiment->add_option("--weight-decay", ex.over.weight_decay, "L2 weight decay");
    experiment->add_option("--grad-clip", ex.over.grad_clip, "global gradient-norm clip");

    SaliencyArgs sa;
    CLI::App* saliency = app.add_subcommand("saliency", "input-gradient maps from a checkpoint");
    saliency->add_option("--checkpoint", sa.checkpoint, "checkpoint directory")->required();
    saliency->add_option("--data", sa.data, "MLDG1 dataset path")->required();
    saliency->add_option("--out", sa.out, "output directory")->required();
    saliency->add_option("--sample", sa.samples, "sample index (repeatable)")
        ->required()
        ->delimiter(',');
    saliency->add_option("--class", sa.cls, "class the objective targets (default: true label)");
    saliency->add_option("--objective", sa.objective, "loss | score");
    saliency->add_option("--reduce", sa.reduce, "channel reduction: max | mean");
    saliency->add_flag("--force", sa.force, "write into a non-empty directory");

    try {
        app.parse(argc, argv);
        if (datagen->parsed()) return cmd_datagen(dg);
        if (train->parsed()) return cmd_train(tr);
        if (experiment->parsed()) return cmd_experiment(ex);
        if (saliency->parsed()) return cmd_saliency(sa);
        return 2;  // unreachable: require_subcommand enforces one
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
