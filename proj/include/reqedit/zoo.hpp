#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/dataset.hpp"
#include "reqedit/mlp.hpp"

namespace reqedit {

MlpConfig sample_config(Rng& rng, int64_t d_in, int out_features);

std::string config_to_json(const MlpConfig& config);
MlpConfig config_from_json(const std::string& text);

struct Checkpoint {
    std::string stage;  // early / mid / final
    int64_t epoch;
    MlpModel model;  // always folded
    double val_acc;
};

// Cross-entropy SGD for `epochs` passes, checkpointing at epochs
// max(1, round(e/12)), round(e/2), and e. Throws NumericalError when the loss
// goes non-finite.
std::vector<Checkpoint> train_mlp(const MlpConfig& config, const TabularDataset& data, int64_t epochs = 60);

struct ZooRecord {
    std::string id;
    int64_t experiment = 0;
    std::string stage;
    std::string file;  // relative to the zoo directory
    double val_acc = 0;
    uint64_t checksum = 0;
    MlpConfig config;
};

struct ZooManifest {
    std::string dataset;
    uint64_t seed = 0;
    int64_t n_experiments = 0;
    std::vector<ZooRecord> records;
    // 80/10/10 partition of experiment indices; checkpoints inherit their
    // experiment's split
    std::vector<int64_t> split_train, split_val, split_test;
    std::string dir;  // directory this manifest was loaded from / written to

    const ZooRecord& record(const std::string& id) const;
    std::vector<const ZooRecord*> records_in(const std::vector<int64_t>& experiments) const;
};

ZooManifest build_zoo(int64_t n_experiments, const TabularDataset& data, uint64_t seed,
                      const std::string& out_dir, int64_t epochs = 60);

uint64_t save_model(const MlpModel& m, const std::string& path);
MlpModel load_model(const std::string& path);

void save_zoo_manifest(const ZooManifest& zoo, const std::string& dir);
ZooManifest load_zoo(const std::string& dir);
// Checksum-verified load of one checkpoint by record id.
MlpModel load_zoo_model(const ZooManifest& zoo, const std::string& id);

}  // namespace reqedit
