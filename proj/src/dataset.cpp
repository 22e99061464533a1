#include "reqedit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace reqedit {

namespace {

constexpr char kDatasetMagic[4] = {'R', 'Q', 'D', 'S'};
constexpr uint32_t kDatasetVersion = 1;

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    std::string t = s.substr(a, b - a + 1);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
    return t;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == delim) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(trim(cur));
    return out;
}

size_t column_index(const Schema& schema, const std::string& name) {
    for (size_t i = 0; i < schema.columns.size(); ++i)
        if (schema.columns[i] == name) return i;
    throw ValidationError("schema '" + schema.name + "': missing column '" + name + "'");
}

double parse_number(const std::string& tok, size_t row, const std::string& col) {
    try {
        size_t used = 0;
        double x = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return x;
    } catch (const std::exception&) {
        throw ValidationError("row " + std::to_string(row) + " column '" + col + "': cannot parse '" + tok + "'");
    }
}

// lexicographically sorted value -> code map, built over the whole file
std::map<std::string, int> build_codes(const RawTable& rows, size_t col) {
    std::map<std::string, int> codes;
    for (const auto& r : rows) codes.emplace(r[col], 0);
    int next = 0;
    for (auto& kv : codes) kv.second = next++;
    return codes;
}

template <typename T>
void write_pod(std::ostream& os, const T& x) {
    os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& x) {
    is.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!is) throw ValidationError("dataset file: truncated");
}

}  // namespace

void Schema::validate() const {
    if (columns.empty()) throw ValidationError("schema '" + name + "': no columns");
    if (features.empty()) throw ValidationError("schema '" + name + "': no feature columns");
    if (label_column.empty()) throw ValidationError("schema '" + name + "': no label column");
    column_index(*this, label_column);
    if (!sensitive_column.empty()) column_index(*this, sensitive_column);
    if (!split_column.empty()) column_index(*this, split_column);
    for (const auto& f : features) column_index(*this, f.name);
}

Schema adult_schema() {
    Schema s;
    s.name = "adult";
    s.delimiter = ',';
    s.columns = {"age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
                 "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
                 "hours_per_week", "native_country", "income"};
    s.features = {{"age", false},           {"workclass", true},      {"fnlwgt", false},
                  {"education", true},      {"education_num", false}, {"marital_status", true},
                  {"occupation", true},     {"relationship", true},   {"race", true},
                  {"sex", true},            {"capital_gain", false},  {"capital_loss", false},
                  {"hours_per_week", false}, {"native_country", true}};
    s.label_column = "income";
    s.sensitive_column = "sex";
    return s;
}

Schema bank_schema() {
    Schema s;
    s.name = "bank";
    s.delimiter = ';';
    s.columns = {"age", "job", "marital", "education", "default", "balance", "housing", "loan",
                 "contact", "day", "month", "duration", "campaign", "pdays", "previous",
                 "poutcome", "y"};
    s.features = {{"age", false},    {"job", true},      {"marital", true},  {"education", true},
                  {"default", true}, {"balance", false}, {"housing", true},  {"loan", true},
                  {"contact", true}, {"day", false},     {"month", true},    {"duration", false},
                  {"campaign", false}, {"pdays", false}, {"previous", false}, {"poutcome", true}};
    s.label_column = "y";
    s.sensitive_column = "marital";
    return s;
}

Schema schema_by_name(const std::string& name) {
    if (name == "adult") return adult_schema();
    if (name == "bank") return bank_schema();
    throw ValidationError("unknown schema '" + name + "' (expected adult, bank, or a .json path)");
}

Schema schema_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open schema file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("schema file " + path + ": " + e.what());
    }
    Schema s;
    s.name = j.value("name", "custom");
    std::string d = j.value("delimiter", ",");
    if (d.size() != 1) throw ValidationError("schema file " + path + ": delimiter must be one character");
    s.delimiter = d[0];
    for (const auto& c : j.at("columns")) s.columns.push_back(c.get<std::string>());
    for (const auto& f : j.at("features")) {
        if (f.is_string()) {
            s.features.push_back({f.get<std::string>(), false});
        } else {
            s.features.push_back({f.at("name").get<std::string>(), f.value("categorical", false)});
        }
    }
    s.label_column = j.at("label").get<std::string>();
    s.sensitive_column = j.value("sensitive", "");
    s.split_column = j.value("split", "");
    s.validate();
    return s;
}

std::vector<int64_t> TabularDataset::split_indices(Split which) const {
    std::vector<int64_t> out;
    for (int64_t i = 0; i < n; ++i)
        if (split[static_cast<size_t>(i)] == static_cast<uint8_t>(which)) out.push_back(i);
    return out;
}

std::vector<int64_t> TabularDataset::val_reserved() const {
    std::vector<int64_t> v = split_indices(Split::val);
    return {v.begin(), v.begin() + static_cast<int64_t>(v.size()) / 2};
}

std::vector<int64_t> TabularDataset::val_selection() const {
    std::vector<int64_t> v = split_indices(Split::val);
    return {v.begin() + static_cast<int64_t>(v.size()) / 2, v.end()};
}

Tensor TabularDataset::rows(const std::vector<int64_t>& idx) const { return ops::gather_rows(X, idx); }

std::vector<int> TabularDataset::labels_at(const std::vector<int64_t>& idx) const {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = y[static_cast<size_t>(idx[i])];
    return out;
}

std::vector<int> TabularDataset::groups_at(const std::vector<int64_t>& idx) const {
    if (!has_sensitive()) throw ValidationError("dataset '" + name + "' has no sensitive attribute");
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = s[static_cast<size_t>(idx[i])];
    return out;
}

void TabularDataset::validate() const {
    if (n <= 0 || d_in <= 0) throw ValidationError("dataset '" + name + "': empty");
    if (X.shape != std::vector<int64_t>{n, d_in}) throw ValidationError("dataset '" + name + "': bad matrix shape");
    if (static_cast<int64_t>(y.size()) != n || static_cast<int64_t>(split.size()) != n)
        throw ValidationError("dataset '" + name + "': label/split length mismatch");
    if (has_sensitive() && static_cast<int64_t>(s.size()) != n)
        throw ValidationError("dataset '" + name + "': sensitive length mismatch");
    if (!X.all_finite()) throw ValidationError("dataset '" + name + "': non-finite feature values");
    for (Split sp : {Split::train, Split::val, Split::test})
        if (split_indices(sp).empty()) throw ValidationError("dataset '" + name + "': empty split");
    for (int64_t i = 0; i < n; ++i) {
        if (y[static_cast<size_t>(i)] < 0 || y[static_cast<size_t>(i)] >= n_classes)
            throw ValidationError("dataset '" + name + "': label out of range at row " + std::to_string(i));
        if (has_sensitive() && (s[static_cast<size_t>(i)] < 0 || s[static_cast<size_t>(i)] >= n_groups))
            throw ValidationError("dataset '" + name + "': group out of range at row " + std::to_string(i));
    }
}

TabularDataset build_dataset(const RawTable& raw, const Schema& schema, uint64_t seed) {
    schema.validate();
    if (raw.empty()) throw ValidationError("dataset '" + schema.name + "': no rows");

    // header row detection: all schema columns present verbatim
    size_t start = 0;
    if (raw[0].size() == schema.columns.size()) {
        bool header = true;
        for (size_t i = 0; i < schema.columns.size(); ++i)
            if (raw[0][i] != schema.columns[i]) { header = false; break; }
        if (header) start = 1;
    }
    RawTable rows(raw.begin() + static_cast<int64_t>(start), raw.end());
    if (rows.empty()) throw ValidationError("dataset '" + schema.name + "': no data rows");
    for (size_t r = 0; r < rows.size(); ++r)
        if (rows[r].size() != schema.columns.size())
            throw ValidationError("row " + std::to_string(r) + ": " + std::to_string(rows[r].size()) +
                                  " fields, schema has " + std::to_string(schema.columns.size()));

    TabularDataset ds;
    ds.name = schema.name;
    ds.n = static_cast<int64_t>(rows.size());
    ds.d_in = static_cast<int64_t>(schema.features.size());
    for (const auto& f : schema.features) ds.feature_names.push_back(f.name);

    // labels
    size_t label_col = column_index(schema, schema.label_column);
    auto label_codes = build_codes(rows, label_col);
    ds.n_classes = static_cast<int>(label_codes.size());
    if (ds.n_classes < 2) throw ValidationError("dataset '" + schema.name + "': fewer than two label values");
    ds.y.resize(static_cast<size_t>(ds.n));
    for (size_t r = 0; r < rows.size(); ++r) ds.y[r] = label_codes.at(rows[r][label_col]);

    // sensitive attribute
    if (!schema.sensitive_column.empty()) {
        size_t sens_col = column_index(schema, schema.sensitive_column);
        auto sens_codes = build_codes(rows, sens_col);
        ds.n_groups = static_cast<int>(sens_codes.size());
        ds.s.resize(static_cast<size_t>(ds.n));
        for (size_t r = 0; r < rows.size(); ++r) ds.s[r] = sens_codes.at(rows[r][sens_col]);
    }

    // features: categorical -> integer code, continuous -> parsed value
    ds.X = Tensor::zeros({ds.n, ds.d_in});
    for (int64_t j = 0; j < ds.d_in; ++j) {
        const FeatureSpec& f = schema.features[static_cast<size_t>(j)];
        size_t col = column_index(schema, f.name);
        if (f.categorical) {
            auto codes = build_codes(rows, col);
            for (size_t r = 0; r < rows.size(); ++r)
                ds.X.at(static_cast<int64_t>(r), j) = static_cast<double>(codes.at(rows[r][col]));
        } else {
            for (size_t r = 0; r < rows.size(); ++r)
                ds.X.at(static_cast<int64_t>(r), j) = parse_number(rows[r][col], r, f.name);
        }
    }

    // splits: file-provided or 70/15/15 seeded shuffle
    ds.split.assign(static_cast<size_t>(ds.n), 0);
    if (!schema.split_column.empty()) {
        size_t col = column_index(schema, schema.split_column);
        for (size_t r = 0; r < rows.size(); ++r) {
            const std::string& v = rows[r][col];
            if (v == "train") ds.split[r] = static_cast<uint8_t>(Split::train);
            else if (v == "val") ds.split[r] = static_cast<uint8_t>(Split::val);
            else if (v == "test") ds.split[r] = static_cast<uint8_t>(Split::test);
            else throw ValidationError("row " + std::to_string(r) + " column '" + schema.split_column + "': bad split '" + v + "'");
        }
    } else {
        std::vector<int64_t> order(static_cast<size_t>(ds.n));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(seed, 0x53504c4954ULL));
        rng.shuffle(order);
        int64_t n_train = (ds.n * 70) / 100;
        int64_t n_val = (ds.n * 15) / 100;
        for (int64_t i = 0; i < ds.n; ++i) {
            Split sp = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
            ds.split[static_cast<size_t>(order[static_cast<size_t>(i)])] = static_cast<uint8_t>(sp);
        }
    }

    // z-score continuous features with training-split statistics
    std::vector<int64_t> train_idx = ds.split_indices(Split::train);
    if (train_idx.empty()) throw ValidationError("dataset '" + schema.name + "': empty train split");
    for (int64_t j = 0; j < ds.d_in; ++j) {
        if (schema.features[static_cast<size_t>(j)].categorical) continue;
        double mean = 0;
        for (int64_t i : train_idx) mean += ds.X.at(i, j);
        mean /= static_cast<double>(train_idx.size());
        double var = 0;
        for (int64_t i : train_idx) var += (ds.X.at(i, j) - mean) * (ds.X.at(i, j) - mean);
        var /= static_cast<double>(train_idx.size());
        double denom = std::sqrt(var + 1e-8);
        for (int64_t i = 0; i < ds.n; ++i) ds.X.at(i, j) = (ds.X.at(i, j) - mean) / denom;
    }

    ds.validate();
    return ds;
}

TabularDataset load_dataset(const std::string& csv_path, const Schema& schema, uint64_t seed) {
    std::ifstream in(csv_path);
    if (!in) throw ValidationError("cannot open dataset file: " + csv_path);
    RawTable rows;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        rows.push_back(split_line(line, schema.delimiter));
    }
    return build_dataset(rows, schema, seed);
}

void save_dataset(const TabularDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write dataset file: " + path);

    nlohmann::json header;
    header["name"] = ds.name;
    header["n"] = ds.n;
    header["d_in"] = ds.d_in;
    header["n_classes"] = ds.n_classes;
    header["n_groups"] = ds.n_groups;
    header["feature_names"] = ds.feature_names;
    std::vector<int64_t> counts(3, 0);
    for (uint8_t sp : ds.split) counts[sp]++;
    header["split_counts"] = counts;
    std::string hs = header.dump();

    out.write(kDatasetMagic, 4);
    write_pod(out, kDatasetVersion);
    write_pod(out, static_cast<uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(ds.X.v.data()), static_cast<std::streamsize>(ds.X.v.size() * sizeof(double)));
    for (int v : ds.y) write_pod(out, static_cast<int32_t>(v));
    for (int v : ds.s) write_pod(out, static_cast<int32_t>(v));
    out.write(reinterpret_cast<const char*>(ds.split.data()), static_cast<std::streamsize>(ds.split.size()));
    if (!out) throw ValidationError("failed writing dataset file: " + path);
}

TabularDataset load_dataset_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open dataset file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kDatasetMagic, 4))
        throw ValidationError("not a dataset file: " + path);
    uint32_t version = 0, hlen = 0;
    read_pod(in, version);
    if (version != kDatasetVersion) throw ValidationError("dataset file " + path + ": unsupported version " + std::to_string(version));
    read_pod(in, hlen);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw ValidationError("dataset file " + path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const std::exception& e) {
        throw ValidationError("dataset file " + path + ": bad header: " + e.what());
    }

    TabularDataset ds;
    ds.name = header.at("name").get<std::string>();
    ds.n = header.at("n").get<int64_t>();
    ds.d_in = header.at("d_in").get<int64_t>();
    ds.n_classes = header.at("n_classes").get<int>();
    ds.n_groups = header.at("n_groups").get<int>();
    ds.feature_names = header.at("feature_names").get<std::vector<std::string>>();

    ds.X = Tensor::zeros({ds.n, ds.d_in});
    in.read(reinterpret_cast<char*>(ds.X.v.data()), static_cast<std::streamsize>(ds.X.v.size() * sizeof(double)));
    ds.y.resize(static_cast<size_t>(ds.n));
    for (auto& v : ds.y) { int32_t x; read_pod(in, x); v = x; }
    if (ds.n_groups > 0) {
        ds.s.resize(static_cast<size_t>(ds.n));
        for (auto& v : ds.s) { int32_t x; read_pod(in, x); v = x; }
    }
    ds.split.resize(static_cast<size_t>(ds.n));
    in.read(reinterpret_cast<char*>(ds.split.data()), static_cast<std::streamsize>(ds.split.size()));
    if (!in) throw ValidationError("dataset file " + path + ": truncated payload");
    ds.validate();
    return ds;
}

BatchSampler::BatchSampler(const TabularDataset& ds, Split split, int64_t k, Rng rng)
    : BatchSampler(ds, ds.split_indices(split), k, rng) {}

BatchSampler::BatchSampler(const TabularDataset& ds, std::vector<int64_t> pool, int64_t k, Rng rng)
    : ds_(ds), pool_(std::move(pool)), k_(k), cursor_(0), rng_(rng) {
    if (k_ <= 0) throw ValidationError("batch size must be positive");
    if (k_ > static_cast<int64_t>(pool_.size()))
        throw ValidationError("batch size " + std::to_string(k_) + " exceeds pool of " + std::to_string(pool_.size()));
    rng_.shuffle(pool_);
}

std::vector<int64_t> BatchSampler::next_indices() {
    if (cursor_ + static_cast<size_t>(k_) > pool_.size()) {
        rng_.shuffle(pool_);
        cursor_ = 0;
    }
    std::vector<int64_t> out(pool_.begin() + static_cast<int64_t>(cursor_),
                             pool_.begin() + static_cast<int64_t>(cursor_) + k_);
    cursor_ += static_cast<size_t>(k_);
    return out;
}

Batch BatchSampler::next() {
    std::vector<int64_t> idx = next_indices();
    Batch b;
    b.X = ds_.rows(idx);
    b.y = ds_.labels_at(idx);
    if (ds_.has_sensitive()) b.s = ds_.groups_at(idx);
    return b;
}

StratifiedSampler::StratifiedSampler(const TabularDataset& ds, std::vector<int64_t> pool, int64_t k, Rng rng)
    : ds_(ds), k_(k), rng_(rng) {
    if (!ds.has_sensitive()) throw ValidationError("stratified sampling needs a sensitive attribute");
    if (k_ <= 0) throw ValidationError("batch size must be positive");
    std::vector<std::vector<int64_t>> cells(static_cast<size_t>(ds.n_groups * ds.n_classes));
    for (int64_t i : pool) {
        int cell = ds.s[static_cast<size_t>(i)] * ds.n_classes + ds.y[static_cast<size_t>(i)];
        cells[static_cast<size_t>(cell)].push_back(i);
    }
    for (int g = 0; g < ds.n_groups; ++g)
        for (int c = 0; c < ds.n_classes; ++c) {
            auto& cell = cells[static_cast<size_t>(g * ds.n_classes + c)];
            if (cell.empty()) {
                empty_cells_.push_back({g, c});
            } else {
                rng_.shuffle(cell);
                cells_.push_back(std::move(cell));
                cursors_.push_back(0);
            }
        }
    if (cells_.empty()) throw ValidationError("stratified sampling: every (group, class) cell is empty");
    if (k_ < static_cast<int64_t>(cells_.size()))
        throw ValidationError("batch size " + std::to_string(k_) + " below the " +
                              std::to_string(cells_.size()) + " non-empty (group, class) cells");
}

std::vector<int64_t> StratifiedSampler::next_indices() {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(k_));
    int64_t per = k_ / static_cast<int64_t>(cells_.size());
    int64_t extra = k_ % static_cast<int64_t>(cells_.size());
    for (size_t c = 0; c < cells_.size(); ++c) {
        int64_t want = per + (static_cast<int64_t>(c) < extra ? 1 : 0);
        for (int64_t t = 0; t < want; ++t) {
            if (cursors_[c] >= cells_[c].size()) {
                rng_.shuffle(cells_[c]);
                cursors_[c] = 0;
            }
            out.push_back(cells_[c][cursors_[c]++]);
        }
    }
    return out;
}

Batch StratifiedSampler::next() {
    std::vector<int64_t> idx = next_indices();
    Batch b;
    b.X = ds_.rows(idx);
    b.y = ds_.labels_at(idx);
    b.s = ds_.groups_at(idx);
    return b;
}

}  // namespace reqedit
