#include "mla/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mla/errors.hpp"

namespace fs = std::filesystem;

namespace mla {

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (variants.empty()) throw ConfigError("experiment needs at least one variant");
    std::set<uint64_t> sset(seeds.begin(), seeds.end());
    if (sset.size() != seeds.size()) throw ConfigError("duplicate seeds in experiment config");
    std::set<std::string> vset(variants.begin(), variants.end());
    if (vset.size() != variants.size())
        throw ConfigError("duplicate variants in experiment config");
    for (const auto& v : variants)
        if (v != "attention" && v != "baseline")
            throw ConfigError("unknown variant '" + v + "' (expected attention or baseline)");
    train.validate();
}

void experiment_config_to_json(const ExperimentConfig& cfg, nlohmann::ordered_json& j) {
    j["seeds"] = cfg.seeds;
    j["variants"] = cfg.variants;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "seeds") cfg.seeds = value.get<std::vector<uint64_t>>();
        else if (key == "variants") cfg.variants = value.get<std::vector<std::string>>();
        else throw ConfigError("unknown experiment config key '" + key + "'");
    }
    return cfg;
}

ModelConfig baseline_variant(const ModelConfig& base) {
    ModelConfig cfg = base;
    cfg.tap_ids.clear();
    cfg.branches.clear();
    return cfg;
}

ModelConfig variant_model(const ModelConfig& base, const std::string& variant) {
    if (variant == "attention") return base;
    if (variant == "baseline") return baseline_variant(base);
    throw ConfigError("unknown variant '" + variant + "'");
}

const CellResult& RunReport::cell(const std::string& variant, const std::string& domain) const {
    auto vi = cells.find(variant);
    if (vi == cells.end()) throw InputError("no results for variant '" + variant + "'");
    auto di = vi->second.find(domain);
    if (di == vi->second.end())
        throw InputError("no results for domain '" + domain + "' under variant '" + variant + "'");
    return di->second;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v * 100.0;
    return os.str();
}

std::string num(double v) { return nlohmann::json(v).dump(); }

}  // namespace

RunReport run_experiment(const DomainDataset& ds, const ExperimentConfig& cfg,
                         const std::string& out_dir) {
    cfg.validate();
    if (ds.n_domains < 2) throw InputError("leave-one-domain-out needs at least two domains");
    if (ds.domain_names.size() != ds.n_domains)
        throw InputError("dataset domain names out of sync with domain count");

    ModelConfig tmpl = cfg.model;
    tmpl.in_channels = 3;
    tmpl.in_height = ds.height;
    tmpl.in_width = ds.width;
    tmpl.n_classes = ds.n_classes;

    RunReport report;
    report.variants = cfg.variants;
    report.domains = ds.domain_names;

    if (!out_dir.empty()) fs::create_directories(out_dir);

    for (const auto& variant : cfg.variants) {
        ModelConfig vm = variant_model(tmpl, variant);
        std::vector<double> domain_means;
        for (int d = 0; d < static_cast<int>(ds.domain_names.size()); ++d) {
            const std::string& domain = ds.domain_names[static_cast<size_t>(d)];
            auto [train_ds, test_ds] = split_leave_one_out(ds, domain);
            CellResult cell;
            for (uint64_t seed : cfg.seeds) {
                vm.seed = seed;
                TrainConfig tc = cfg.train;
                tc.seed = seed;
                MultiLevelAttentionNet net(vm);
                std::vector<EpochLog> logs = train(net, train_ds, tc, d);
                double acc = evaluate(net, test_ds);
                cell.seeds.push_back(seed);
                cell.accuracies.push_back(acc);
                cell.final_train_acc.push_back(logs.empty() ? 0.0 : logs.back().train_accuracy);

                if (!out_dir.empty()) {
                    fs::path run_dir = fs::path(out_dir) / "runs" / variant / domain /
                                       ("seed" + std::to_string(seed));
                    fs::create_directories(run_dir);
                    write_train_log(logs, (run_dir / "train_log.jsonl").string());
                    nlohmann::ordered_json metrics;
                    metrics["variant"] = variant;
                    metrics["held_out_domain"] = domain;
                    metrics["seed"] = seed;
                    metrics["heldout_accuracy"] = acc;
                    metrics["final_train_accuracy"] = cell.final_train_acc.back();
                    std::ofstream mf(run_dir / "metrics.json", std::ios::binary);
                    if (!mf) throw IoError("cannot write run metrics in " + run_dir.string());
                    mf << metrics.dump(2) << '\n';
                    save_checkpoint(net, (run_dir / "checkpoint").string());
                }
            }
            cell.mean = mean_of(cell.accuracies);
            cell.stddev = sample_stddev(cell.accuracies, cell.mean);
            domain_means.push_back(cell.mean);
            report.cells[variant][domain] = std::move(cell);
        }
        report.averages[variant] = mean_of(domain_means);
    }

    if (!out_dir.empty()) write_report(report, out_dir);
    return report;
}

std::string render_text(const RunReport& report) {
    if (report.variants.empty() || report.domains.empty())
        throw InputError("cannot render an empty report");

    const size_t ncols = report.domains.size() + 1;  // + Average
    // Cell text first, then bold the per-column best.
    std::vector<std::vector<std::string>> body;
    std::vector<std::vector<double>> values;
    for (const auto& variant : report.variants) {
        std::vector<std::string> row;
        std::vector<double> val;
        for (const auto& domain : report.domains) {
            const CellResult& c = report.cell(variant, domain);
            std::string s = pct(c.mean);
            if (c.seeds.size() > 1) s += " +- " + pct(c.stddev);
            row.push_back(std::move(s));
            val.push_back(c.mean);
        }
        auto ai = report.averages.find(variant);
        if (ai == report.averages.end())
            throw InputError("no average recorded for variant '" + variant + "'");
        row.push_back(pct(ai->second));
        val.push_back(ai->second);
        body.push_back(std::move(row));
        values.push_back(std::move(val));
    }
    for (size_t col = 0; col < ncols; ++col) {
        double best = values[0][col];
        for (const auto& v : values) best = std::max(best, v[col]);
        for (size_t r = 0; r < body.size(); ++r)
            if (values[r][col] == best) body[r][col] = "**" + body[r][col] + "**";
    }

    std::vector<std::string> header{"variant"};
    for (const auto& d : report.domains) header.push_back(d);
    header.push_back("Average");

    std::vector<size_t> width(ncols + 1, 0);
    for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    width[0] = std::max(width[0], [&] {
        size_t w = 0;
        for (const auto& v : report.variants) w = std::max(w, v.size());
        return w;
    }());
    for (const auto& row : body)
        for (size_t c = 0; c < row.size(); ++c) width[c + 1] = std::max(width[c + 1], row[c].size());

    std::ostringstream os;
    os << "held-out accuracy (%), mean over " << report.cells.begin()->second.begin()->second.seeds.size()
       << " seed(s)\n";
    auto emit_row = [&](const std::vector<std::string>& cells) {
        for (size_t c = 0; c < cells.size(); ++c) {
            if (c) os << " | ";
            os << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
        }
        os << '\n';
    };
    emit_row(header);
    {
        std::vector<std::string> rule;
        for (size_t c = 0; c < ncols + 1; ++c) rule.push_back(std::string(width[c], '-'));
        emit_row(rule);
    }
    for (size_t r = 0; r < body.size(); ++r) {
        std::vector<std::string> row{report.variants[r]};
        row.insert(row.end(), body[r].begin(), body[r].end());
        emit_row(row);
    }
    return os.str();
}

std::string render_csv(const RunReport& report) {
    std::ostringstream os;
    os << "variant,domain,seed,heldout_accuracy,final_train_accuracy\n";
    for (const auto& variant : report.variants) {
        for (const auto& domain : report.domains) {
            const CellResult& c = report.cell(variant, domain);
            for (size_t i = 0; i < c.seeds.size(); ++i) {
                os << variant << ',' << domain << ',' << c.seeds[i] << ','
                   << num(c.accuracies[i]) << ',' << num(c.final_train_acc[i]) << '\n';
            }
        }
    }
    return os.str();
}

nlohmann::ordered_json report_json(const RunReport& report) {
    nlohmann::ordered_json j;
    j["variants"] = report.variants;
    j["domains"] = report.domains;
    nlohmann::ordered_json cells = nlohmann::ordered_json::object();
    for (const auto& variant : report.variants) {
        nlohmann::ordered_json vj = nlohmann::ordered_json::object();
        for (const auto& domain : report.domains) {
            const CellResult& c = report.cell(variant, domain);
            nlohmann::ordered_json cj;
            cj["seeds"] = c.seeds;
            cj["accuracies"] = c.accuracies;
            cj["final_train_accuracies"] = c.final_train_acc;
            cj["mean"] = c.mean;
            cj["stddev"] = c.stddev;
            vj[domain] = std::move(cj);
        }
        cells[variant] = std::move(vj);
    }
    j["cells"] = std::move(cells);
    nlohmann::ordered_json avg = nlohmann::ordered_json::object();
    for (const auto& variant : report.variants) avg[variant] = report.averages.at(variant);
    j["averages"] = std::move(avg);
    return j;
}

void write_report(const RunReport& report, const std::string& dir) {
    fs::create_directories(dir);
    auto dump = [&](const std::string& name, const std::string& text) {
        fs::path p = fs::path(dir) / name;
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
        out << text;
        if (!out) throw IoError("short write to '" + p.string() + "'");
    };
    dump("report.txt", render_text(report));
    dump("report.csv", render_csv(report));
    dump("report.json", report_json(report).dump(2) + "\n");
}

}  // namespace mla
