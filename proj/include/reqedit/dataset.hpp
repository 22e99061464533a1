#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reqedit/common.hpp"
#include "reqedit/tensor.hpp"

namespace reqedit {

enum class Split : uint8_t { train = 0, val = 1, test = 2 };

struct FeatureSpec {
    std::string name;
    bool categorical = false;
};

// Column layout of a delimited text file plus which columns feed the model.
struct Schema {
    std::string name;
    char delimiter = ',';
    std::vector<std::string> columns;   // file column order
    std::vector<FeatureSpec> features;  // model input order
    std::string label_column;
    std::string sensitive_column;  // empty when the task has no sensitive attribute
    std::string split_column;      // empty: assign splits by seeded shuffle

    void validate() const;
};

Schema adult_schema();
Schema bank_schema();
Schema schema_by_name(const std::string& name);
Schema schema_from_json_file(const std::string& path);

struct TabularDataset {
    std::string name;
    int64_t n = 0;
    int64_t d_in = 0;
    int n_classes = 0;
    int n_groups = 0;  // 0 when no sensitive attribute
    Tensor X;          // n x d_in, z-scored continuous columns, integer-coded categoricals
    std::vector<int> y;
    std::vector<int> s;             // empty when n_groups == 0
    std::vector<uint8_t> split;     // Split per row
    std::vector<std::string> feature_names;

    bool has_sensitive() const { return n_groups > 0; }
    std::vector<int64_t> split_indices(Split which) const;
    // Disjoint halves of the validation split, in row order: the first half is
    // reserved for editor training, the second half for model selection.
    std::vector<int64_t> val_reserved() const;
    std::vector<int64_t> val_selection() const;
    Tensor rows(const std::vector<int64_t>& idx) const;
    std::vector<int> labels_at(const std::vector<int64_t>& idx) const;
    std::vector<int> groups_at(const std::vector<int64_t>& idx) const;
    void validate() const;
};

// Raw string table, one inner vector per row; produced by the CSV reader and
// the synthetic generators.
using RawTable = std::vector<std::vector<std::string>>;

TabularDataset load_dataset(const std::string& csv_path, const Schema& schema, uint64_t seed);
TabularDataset build_dataset(const RawTable& rows, const Schema& schema, uint64_t seed);

void save_dataset(const TabularDataset& ds, const std::string& path);
TabularDataset load_dataset_file(const std::string& path);

struct Batch {
    Tensor X;
    std::vector<int> y;
    std::vector<int> s;
};

// Uniform without-replacement sampling within an epoch pass: the pool is
// reshuffled every time it is exhausted.
class BatchSampler {
  public:
    BatchSampler(const TabularDataset& ds, Split split, int64_t k, Rng rng);
    BatchSampler(const TabularDataset& ds, std::vector<int64_t> pool, int64_t k, Rng rng);

    std::vector<int64_t> next_indices();
    Batch next();
    int64_t pool_size() const { return static_cast<int64_t>(pool_.size()); }

  private:
    const TabularDataset& ds_;
    std::vector<int64_t> pool_;
    int64_t k_;
    size_t cursor_;
    Rng rng_;
};

// Draws near-equal counts from every non-empty (group, class) cell so fairness
// statistics see all cells each batch. Cells empty in the pool are dropped and
// reported via empty_cells().
class StratifiedSampler {
  public:
    StratifiedSampler(const TabularDataset& ds, std::vector<int64_t> pool, int64_t k, Rng rng);

    std::vector<int64_t> next_indices();
    Batch next();
    const std::vector<std::pair<int, int>>& empty_cells() const { return empty_cells_; }

  private:
    const TabularDataset& ds_;
    std::vector<std::vector<int64_t>> cells_;
    std::vector<size_t> cursors_;
    std::vector<std::pair<int, int>> empty_cells_;
    int64_t k_;
    Rng rng_;
};

}  // namespace reqedit
