#pragma once

#include <cstdint>
#include <string>

#include "reqedit/dataset.hpp"

namespace reqedit {

// Schema-faithful synthetic tables (header row included). Feature/label
// dependencies are built in so trained classifiers have signal to preserve,
// near-noise columns to drop, and group-conditional error gaps to repair.
RawTable synth_adult_rows(int64_t n, uint64_t seed);
RawTable synth_bank_rows(int64_t n, uint64_t seed);

void write_csv(const RawTable& rows, char delimiter, const std::string& path);

// Generate rows for the named schema ("adult" or "bank") and run them through
// the regular ingestion pipeline.
TabularDataset synth_dataset(const std::string& schema_name, int64_t n, uint64_t seed);

}  // namespace reqedit
