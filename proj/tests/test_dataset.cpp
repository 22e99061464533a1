#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <set>

#include "reqedit/dataset.hpp"
#include "reqedit/synth.hpp"

using namespace reqedit;

namespace {

RawTable tiny_table() {
    RawTable rows;
    rows.push_back({"age", "color", "score", "group", "label"});
    const char* colors[] = {"red", "green", "blue"};
    const char* groups[] = {"a", "b"};
    for (int i = 0; i < 40; ++i) {
        rows.push_back({std::to_string(20 + i), colors[i % 3], std::to_string(i * 0.5),
                        groups[i % 2], i % 4 == 0 ? "yes" : "no"});
    }
    return rows;
}

Schema tiny_schema() {
    Schema s;
    s.name = "tiny";
    s.columns = {"age", "color", "score", "group", "label"};
    s.features = {{"age", false}, {"color", true}, {"score", false}, {"group", true}};
    s.label_column = "label";
    s.sensitive_column = "group";
    return s;
}

}  // namespace

TEST_CASE("build_dataset encodes, standardizes, and splits") {
    TabularDataset ds = build_dataset(tiny_table(), tiny_schema(), 7);
    CHECK(ds.n == 40);
    CHECK(ds.d_in == 4);
    CHECK(ds.n_classes == 2);
    CHECK(ds.n_groups == 2);

    // continuous columns: train mean 0, variance 1
    std::vector<int64_t> train = ds.split_indices(Split::train);
    for (int64_t j : {int64_t(0), int64_t(2)}) {
        double mean = 0, var = 0;
        for (int64_t i : train) mean += ds.X.at(i, j);
        mean /= static_cast<double>(train.size());
        for (int64_t i : train) var += (ds.X.at(i, j) - mean) * (ds.X.at(i, j) - mean);
        var /= static_cast<double>(train.size());
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-6);
    }

    // categorical columns keep integer codes: blue=0, green=1, red=2
    std::set<double> codes;
    for (int64_t i = 0; i < ds.n; ++i) codes.insert(ds.X.at(i, 1));
    CHECK(codes == std::set<double>{0.0, 1.0, 2.0});

    // splits partition the rows at 70/15/15
    CHECK(ds.split_indices(Split::train).size() == 28);
    CHECK(ds.split_indices(Split::val).size() == 6);
    CHECK(ds.split_indices(Split::test).size() == 6);

    // identical seed, identical assignment
    TabularDataset ds2 = build_dataset(tiny_table(), tiny_schema(), 7);
    CHECK(ds.split == ds2.split);
    TabularDataset ds3 = build_dataset(tiny_table(), tiny_schema(), 8);
    CHECK(ds.split != ds3.split);

    // validation halves are disjoint and cover the split
    auto reserved = ds.val_reserved();
    auto selection = ds.val_selection();
    CHECK(reserved.size() == 3);
    CHECK(selection.size() == 3);
    for (int64_t r : reserved)
        for (int64_t s : selection) CHECK(r != s);
}

TEST_CASE("constant columns standardize to zero") {
    RawTable rows;
    rows.push_back({"x", "label"});
    for (int i = 0; i < 30; ++i) rows.push_back({"5.0", i % 2 ? "a" : "b"});
    Schema s;
    s.name = "const";
    s.columns = {"x", "label"};
    s.features = {{"x", false}};
    s.label_column = "label";
    TabularDataset ds = build_dataset(rows, s, 1);
    for (int64_t i = 0; i < ds.n; ++i) CHECK(ds.X.at(i, 0) == 0.0);
    CHECK(!ds.has_sensitive());
}

TEST_CASE("loader rejects bad input with row and column context") {
    Schema s = tiny_schema();
    RawTable rows = tiny_table();
    rows[5][0] = "not-a-number";
    CHECK_THROWS_WITH_AS(build_dataset(rows, s, 1), doctest::Contains("column 'age'"), ValidationError);

    RawTable short_row = tiny_table();
    short_row[3].pop_back();
    CHECK_THROWS_AS(build_dataset(short_row, s, 1), ValidationError);

    Schema missing = s;
    missing.label_column = "absent";
    CHECK_THROWS_WITH_AS(build_dataset(tiny_table(), missing, 1), doctest::Contains("absent"), ValidationError);
}

TEST_CASE("file-provided split labels are honored") {
    RawTable rows;
    rows.push_back({"x", "split", "label"});
    for (int i = 0; i < 12; ++i) {
        const char* sp = i < 8 ? "train" : (i < 10 ? "val" : "test");
        rows.push_back({std::to_string(i), sp, i % 2 ? "a" : "b"});
    }
    Schema s;
    s.name = "presplit";
    s.columns = {"x", "split", "label"};
    s.features = {{"x", false}};
    s.label_column = "label";
    s.split_column = "split";
    TabularDataset ds = build_dataset(rows, s, 123);
    CHECK(ds.split_indices(Split::train).size() == 8);
    CHECK(ds.split_indices(Split::val).size() == 2);
    CHECK(ds.split_indices(Split::test).size() == 2);

    rows[3][1] = "holdout";
    CHECK_THROWS_WITH_AS(build_dataset(rows, s, 123), doctest::Contains("holdout"), ValidationError);
}

TEST_CASE("dataset file round-trip is lossless") {
    TabularDataset ds = synth_dataset("adult", 500, 42);
    std::string path = "roundtrip_test.ds";
    save_dataset(ds, path);
    TabularDataset back = load_dataset_file(path);
    std::remove(path.c_str());

    CHECK(back.name == ds.name);
    CHECK(back.n == ds.n);
    CHECK(back.d_in == ds.d_in);
    CHECK(back.n_classes == ds.n_classes);
    CHECK(back.n_groups == ds.n_groups);
    CHECK(back.feature_names == ds.feature_names);
    CHECK(back.y == ds.y);
    CHECK(back.s == ds.s);
    CHECK(back.split == ds.split);
    REQUIRE(back.X.same_shape(ds.X));
    for (size_t i = 0; i < ds.X.v.size(); ++i) CHECK(back.X.v[i] == ds.X.v[i]);

    CHECK_THROWS_AS(load_dataset_file("no_such_file.ds"), ValidationError);
}

TEST_CASE("csv round-trip through the loader") {
    RawTable rows = synth_adult_rows(300, 9);
    std::string path = "synth_adult_test.csv";
    write_csv(rows, ',', path);
    TabularDataset ds = load_dataset(path, adult_schema(), 11);
    std::remove(path.c_str());
    CHECK(ds.n == 300);
    CHECK(ds.d_in == 14);
    CHECK(ds.n_classes == 2);
    CHECK(ds.n_groups == 2);
    CHECK(ds.feature_names[9] == "sex");
}

TEST_CASE("synthetic adult has signal, noise columns, and a group gap") {
    TabularDataset ds = synth_dataset("adult", 8000, 3);
    double pos = 0;
    for (int v : ds.y) pos += v;
    pos /= static_cast<double>(ds.n);
    CHECK(pos > 0.15);
    CHECK(pos < 0.35);

    // base-rate difference between groups
    double rate[2] = {0, 0}, cnt[2] = {0, 0};
    for (int64_t i = 0; i < ds.n; ++i) {
        rate[ds.s[static_cast<size_t>(i)]] += ds.y[static_cast<size_t>(i)];
        cnt[ds.s[static_cast<size_t>(i)]] += 1;
    }
    double gap = std::fabs(rate[0] / cnt[0] - rate[1] / cnt[1]);
    CHECK(gap > 0.05);
}

TEST_CASE("batch sampler walks epochs without replacement") {
    TabularDataset ds = synth_dataset("adult", 200, 5);
    std::vector<int64_t> val = ds.split_indices(Split::val);
    BatchSampler sampler(ds, Split::val, 10, Rng(3));
    std::set<int64_t> seen;
    size_t batches = val.size() / 10;
    for (size_t b = 0; b < batches; ++b) {
        auto idx = sampler.next_indices();
        CHECK(idx.size() == 10);
        for (int64_t i : idx) {
            CHECK(ds.split[static_cast<size_t>(i)] == static_cast<uint8_t>(Split::val));
            CHECK(!seen.count(i));
            seen.insert(i);
        }
    }
    CHECK(seen.size() == batches * 10);

    // k equal to the pool returns the whole split
    BatchSampler whole(ds, Split::val, static_cast<int64_t>(val.size()), Rng(4));
    auto all = whole.next_indices();
    CHECK(std::set<int64_t>(all.begin(), all.end()) == std::set<int64_t>(val.begin(), val.end()));

    CHECK_THROWS_AS(BatchSampler(ds, Split::val, static_cast<int64_t>(val.size()) + 1, Rng(5)), ValidationError);

    // determinism under a fixed seed
    BatchSampler s1(ds, Split::train, 16, Rng(9));
    BatchSampler s2(ds, Split::train, 16, Rng(9));
    CHECK(s1.next_indices() == s2.next_indices());

    Batch b = BatchSampler(ds, Split::train, 16, Rng(10)).next();
    CHECK(b.X.shape == std::vector<int64_t>{16, ds.d_in});
    CHECK(b.y.size() == 16);
    CHECK(b.s.size() == 16);
}

TEST_CASE("stratified sampler covers every non-empty cell each batch") {
    TabularDataset ds = synth_dataset("adult", 3000, 6);
    std::vector<int64_t> pool = ds.split_indices(Split::train);
    StratifiedSampler sampler(ds, pool, 32, Rng(8));
    CHECK(sampler.empty_cells().empty());
    auto idx = sampler.next_indices();
    CHECK(idx.size() == 32);
    std::set<std::pair<int, int>> cells;
    for (int64_t i : idx)
        cells.insert({ds.s[static_cast<size_t>(i)], ds.y[static_cast<size_t>(i)]});
    CHECK(cells.size() == 4);

    // a pool with one cell emptied is flagged
    std::vector<int64_t> filtered;
    for (int64_t i : pool)
        if (!(ds.s[static_cast<size_t>(i)] == 0 && ds.y[static_cast<size_t>(i)] == 1)) filtered.push_back(i);
    StratifiedSampler flagged(ds, filtered, 32, Rng(8));
    REQUIRE(flagged.empty_cells().size() == 1);
    CHECK(flagged.empty_cells()[0] == std::pair<int, int>{0, 1});
}

TEST_CASE("schema helpers") {
    CHECK(adult_schema().features.size() == 14);
    CHECK(bank_schema().features.size() == 16);
    CHECK(schema_by_name("adult").name == "adult");
    CHECK_THROWS_AS(schema_by_name("mnist"), ValidationError);
}
