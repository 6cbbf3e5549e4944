#pragma once

#include <map>
#include <string>
#include <vector>

#include "mla/datagen.hpp"
#include "mla/model.hpp"
#include "mla/trainer.hpp"

namespace mla {

struct ExperimentConfig {
    ModelConfig model;  // template; input dims and n_classes are taken from the dataset
    TrainConfig train;
    std::vector<uint64_t> seeds{1, 2, 3};
    std::vector<std::string> variants{"attention", "baseline"};

    void validate() const;
};

void experiment_config_to_json(const ExperimentConfig& cfg, nlohmann::ordered_json& j);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// "attention" keeps the template; "baseline" strips every branch so only the
// backbone feeds the classifier. Anything else is a ConfigError.
ModelConfig variant_model(const ModelConfig& base, const std::string& variant);
ModelConfig baseline_variant(const ModelConfig& base);

struct CellResult {
    std::vector<uint64_t> seeds;
    std::vector<double> accuracies;       // held-out accuracy per seed
    std::vector<double> final_train_acc;  // last-epoch train accuracy per seed
    double mean = 0.0;
    double stddev = 0.0;  // sample stddev over seeds; 0 for a single seed
};

struct RunReport {
    std::vector<std::string> variants;
    std::vector<std::string> domains;
    // variant -> held-out domain -> per-seed results
    std::map<std::string, std::map<std::string, CellResult>> cells;
    std::map<std::string, double> averages;  // variant -> mean of per-domain means

    const CellResult& cell(const std::string& variant, const std::string& domain) const;
};

// Full grid: variant x held-out domain x seed, fresh model per run. Every run
// trains with the held-out domain forbidden and evaluates on it. out_dir ""
// skips artifacts; otherwise runs/<variant>/<domain>/seed<k>/ gets the train
// log, metrics and a checkpoint, and report.{txt,csv,json} land in out_dir.
RunReport run_experiment(const DomainDataset& ds, const ExperimentConfig& cfg,
                         const std::string& out_dir);

// Accuracy table in percent (2 decimals), one row per variant, one column per
// domain plus Average; the best value in each column is wrapped in **.
std::string render_text(const RunReport& report);
// One row per run, full-precision numbers (shortest round-trip form).
std::string render_csv(const RunReport& report);
nlohmann::ordered_json report_json(const RunReport& report);

void write_report(const RunReport& report, const std::string& dir);

}  // namespace mla
