#include "reqedit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace reqedit {

namespace {

std::string istr(double x) { return std::to_string(static_cast<long long>(std::llround(x))); }

double clampd(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

const char* kEduByLevel[16] = {
    "Preschool", "1st-4th", "5th-6th", "7th-8th", "9th", "10th", "11th", "12th",
    "HS-grad", "Some-college", "Assoc-voc", "Assoc-acdm", "Bachelors", "Masters",
    "Prof-school", "Doctorate"};

const std::vector<std::string> kWorkclass = {
    "Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
    "State-gov", "Without-pay", "Never-worked"};
const std::vector<std::string> kMarital = {
    "Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
    "Married-spouse-absent", "Married-AF-spouse"};
const std::vector<std::string> kOccupation = {
    "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
    "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
    "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
    "Armed-Forces"};
const std::vector<std::string> kHighOcc = {"Exec-managerial", "Prof-specialty", "Tech-support", "Sales"};
const std::vector<std::string> kLowOcc = {
    "Handlers-cleaners", "Machine-op-inspct", "Other-service", "Farming-fishing", "Transport-moving"};
const std::vector<std::string> kRelationship = {
    "Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"};
const std::vector<std::string> kRace = {
    "White", "Black", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other"};
const std::vector<std::string> kCountry = {
    "United-States", "Mexico", "Philippines", "Germany", "Canada", "India", "England", "Cuba"};

const std::vector<std::string> kJob = {
    "admin.", "blue-collar", "entrepreneur", "housemaid", "management", "retired",
    "self-employed", "services", "student", "technician", "unemployed", "unknown"};
const std::vector<std::string> kBankMarital = {"married", "single", "divorced"};
const std::vector<std::string> kBankEdu = {"primary", "secondary", "tertiary", "unknown"};
const std::vector<std::string> kContact = {"cellular", "telephone", "unknown"};
const std::vector<std::string> kMonth = {"jan", "feb", "mar", "apr", "may", "jun",
                                         "jul", "aug", "sep", "oct", "nov", "dec"};
const std::vector<std::string> kPoutcome = {"unknown", "failure", "other", "success"};

}  // namespace

RawTable synth_adult_rows(int64_t n, uint64_t seed) {
    if (n <= 0) throw ValidationError("synth: row count must be positive");
    Rng rng(mix_seed(seed, 0xAD01ULL));
    RawTable rows;
    rows.reserve(static_cast<size_t>(n) + 1);
    Schema schema = adult_schema();
    rows.push_back(schema.columns);

    for (int64_t i = 0; i < n; ++i) {
        double skill = rng.normal();
        bool male = rng.bernoulli(0.67);
        double age = clampd(std::round(38.0 + 13.0 * rng.normal()), 17, 90);
        int edu_level = static_cast<int>(clampd(std::round(10.0 + 2.5 * skill + 0.8 * rng.normal()), 1, 16));

        std::string workclass = rng.uniform() < 0.7 ? "Private" : rng.choice(kWorkclass);
        double fnlwgt = std::round(std::exp(11.6 + 0.5 * rng.normal()));
        std::string marital = age < 26 && rng.uniform() < 0.6 ? "Never-married" : rng.choice(kMarital);
        std::string occupation = skill > 0.8 ? rng.choice(kHighOcc)
                               : skill < -0.8 ? rng.choice(kLowOcc)
                                              : rng.choice(kOccupation);
        std::string relationship;
        if (marital == "Married-civ-spouse" || marital == "Married-AF-spouse")
            relationship = male ? "Husband" : "Wife";
        else
            relationship = rng.uniform() < 0.5 ? "Not-in-family" : rng.choice(kRelationship);
        std::string race = rng.uniform() < 0.85 ? "White" : rng.choice(kRace);
        bool has_gain = rng.bernoulli(0.08);
        double capital_gain = has_gain ? std::round(std::exp(8.0 + 0.6 * skill + 0.7 * rng.normal())) : 0.0;
        double capital_loss = rng.bernoulli(0.05) ? clampd(std::round(1500 + 400 * rng.normal()), 100, 4000) : 0.0;
        double hours = clampd(std::round(40.0 + 8.0 * rng.normal() + 3.0 * skill), 1, 99);
        std::string country = rng.uniform() < 0.9 ? "United-States" : rng.choice(kCountry);

        // group-dependent score so downstream classifiers inherit an error-rate gap
        double score = 1.1 * skill + 0.03 * (age - 38.0) - (age > 65 ? 0.8 : 0.0) +
                       0.03 * (hours - 40.0) + 1.5 * (has_gain ? 1.0 : 0.0) +
                       0.6 * (male ? 1.0 : 0.0) - 1.45;
        bool positive = rng.bernoulli(sigmoid(3.4 * score));

        rows.push_back({istr(age), workclass, istr(fnlwgt), kEduByLevel[edu_level - 1], istr(edu_level),
                        marital, occupation, relationship, race, male ? "Male" : "Female",
                        istr(capital_gain), istr(capital_loss), istr(hours), country,
                        positive ? ">50K" : "<=50K"});
    }
    return rows;
}

RawTable synth_bank_rows(int64_t n, uint64_t seed) {
    if (n <= 0) throw ValidationError("synth: row count must be positive");
    Rng rng(mix_seed(seed, 0xBA02ULL));
    RawTable rows;
    rows.reserve(static_cast<size_t>(n) + 1);
    Schema schema = bank_schema();
    rows.push_back(schema.columns);

    for (int64_t i = 0; i < n; ++i) {
        double propensity = rng.normal();
        double age = clampd(std::round(41.0 + 11.0 * rng.normal()), 18, 95);
        std::string job = rng.choice(kJob);
        std::string marital = rng.choice(kBankMarital);
        std::string education = rng.choice(kBankEdu);
        bool in_default = rng.bernoulli(0.02);
        double balance = std::round(1400.0 * std::exp(0.8 * rng.normal()) - 300.0);
        bool housing = rng.bernoulli(0.55);
        bool loan = rng.bernoulli(0.16);
        std::string contact = rng.choice(kContact);
        double day = clampd(std::round(rng.uniform(1, 31)), 1, 31);
        std::string month = rng.choice(kMonth);
        double duration = std::round(180.0 * std::exp(0.7 * propensity + 0.4 * rng.normal()));
        double campaign = clampd(std::round(1.0 + std::exp(0.8 * rng.normal())), 1, 30);
        bool contacted_before = rng.bernoulli(0.25);
        double pdays = contacted_before ? std::round(rng.uniform(1, 400)) : -1.0;
        double previous = contacted_before ? clampd(std::round(std::exp(rng.normal())), 1, 20) : 0.0;
        std::string poutcome = contacted_before ? rng.choice(kPoutcome) : "unknown";

        double score = 1.2 * (duration - 250.0) / 250.0 + 1.0 * (poutcome == "success" ? 1.0 : 0.0) +
                       0.3 * (housing ? -1.0 : 1.0) + 0.2 * (marital == "single" ? 1.0 : 0.0) +
                       0.25 * propensity - 1.9;
        bool positive = rng.bernoulli(sigmoid(1.5 * score));

        rows.push_back({istr(age), job, marital, education, in_default ? "yes" : "no", istr(balance),
                        housing ? "yes" : "no", loan ? "yes" : "no", contact, istr(day), month,
                        istr(duration), istr(campaign), istr(pdays), istr(previous), poutcome,
                        positive ? "yes" : "no"});
    }
    return rows;
}

void write_csv(const RawTable& rows, char delimiter, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write csv: " + path);
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << delimiter;
            out << row[i];
        }
        out << '\n';
    }
    if (!out) throw ValidationError("failed writing csv: " + path);
}

TabularDataset synth_dataset(const std::string& schema_name, int64_t n, uint64_t seed) {
    Schema schema = schema_by_name(schema_name);
    RawTable rows = schema.name == "adult" ? synth_adult_rows(n, seed) : synth_bank_rows(n, seed);
    return build_dataset(rows, schema, seed);
}

}  // namespace reqedit
