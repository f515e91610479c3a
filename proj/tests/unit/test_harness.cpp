#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "han/error.hpp"
#include "han/harness.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string config_error_field(const json& doc) {
  try {
    han::config_from_json(doc).validate();
  } catch (const han::ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

TEST(Config, PresetDefaults) {
  const auto c = han::preset_config(han::Preset::Figure2);
  EXPECT_EQ(c.rounds, 2502U);
  EXPECT_EQ(c.steps, 1000U);
  EXPECT_EQ(c.depth, 1U);
  EXPECT_DOUBLE_EQ(c.p, 0.2);
  EXPECT_DOUBLE_EQ(c.q, 0.3);
  EXPECT_DOUBLE_EQ(c.alpha_a, 0.2);
  EXPECT_DOUBLE_EQ(c.alpha_b, 0.0);
  EXPECT_DOUBLE_EQ(c.beta, 2.0);
  EXPECT_DOUBLE_EQ(c.cc_learning_rate, 0.005);
  EXPECT_DOUBLE_EQ(c.cc_sharpness, 10.0);
  EXPECT_EQ(c.replications, 20U);
  EXPECT_EQ(c.test_size, 500U);
  EXPECT_EQ(c.epoch_length(), 9U);
  EXPECT_NO_THROW(c.validate());
  for (auto p : {han::Preset::Table1Ablation, han::Preset::AppendixBReplacement, han::Preset::Figure3Perceptron,
                 han::Preset::Custom}) {
    const auto other = han::preset_config(p);
    EXPECT_EQ(other.rounds, 2502U);
    EXPECT_NO_THROW(other.validate()) << han::to_string(p);
  }
  EXPECT_EQ(han::preset_config(han::Preset::AppendixBReplacement).schedule, han::ScheduleMode::IidReplacement);
  EXPECT_EQ(han::preset_config(han::Preset::Table1Ablation).ablation_counts.size(), 6U);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(config_error_field({{"M", 2500}}), "M");
  EXPECT_EQ(config_error_field({{"replications", 0}}), "replications");
  EXPECT_EQ(config_error_field({{"p", 1.5}}), "p");
  EXPECT_EQ(config_error_field({{"beta", 1.0}}), "beta");
  EXPECT_EQ(config_error_field({{"eta", "bogus"}}), "eta");
  EXPECT_EQ(config_error_field({{"eta", -1.0}}), "eta");
  EXPECT_EQ(config_error_field({{"colour", 3}}), "colour");
  EXPECT_EQ(config_error_field({{"N", "many"}}), "N");
  EXPECT_EQ(config_error_field({{"K", 5}, {"N", 5}}), "K");
  EXPECT_EQ(config_error_field({{"ablation_counts", {0, 7}}}), "ablation_counts[1]");
  EXPECT_EQ(config_error_field({{"preset", "figure9"}}), "preset");
  EXPECT_EQ(config_error_field({{"algorithms", json::array()}}), "algorithms");
  EXPECT_EQ(config_error_field({{"gain_mode", "solo_counts"}}), "gain_mode");
  EXPECT_EQ(config_error_field({{"features", 1}, {"characteristics", 1}}), "features");
  EXPECT_EQ(config_error_field({{"M", 900}, {"eta", 0.05}, {"schedule", "iid"}}), "schedule");
  EXPECT_EQ(config_error_field({{"M", 900}, {"eta", 0.05}}), "<accepted>");
}

TEST(Config, JsonRoundTrip) {
  auto c = han::preset_config(han::Preset::Table1Ablation);
  c.seed = 77;
  c.eta = han::LearningRate::fixed(0.05);
  const auto doc = han::to_json(c);
  const auto back = han::config_from_json(doc);
  EXPECT_EQ(han::to_json(back), doc);
}

han::ExperimentConfig tiny(han::Preset preset = han::Preset::Figure2) {
  auto c = han::preset_config(preset);
  c.rounds = 27;
  c.steps = 60;
  c.replications = 3;
  c.test_size = 30;
  c.seed = 5;
  return c;
}

TEST(Experiment, NoTrainingStillEvaluates) {
  auto c = han::preset_config(han::Preset::Custom);
  c.rounds = 0;
  c.steps = 50;
  c.replications = 2;
  c.test_size = 20;
  const auto r = han::run_experiment(c, 1);
  ASSERT_EQ(r.rows.size(), 2U);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.epoch, 0U);
    EXPECT_GE(row.accuracy, 0.0);
    EXPECT_LE(row.accuracy, 1.0);
  }
}

TEST(Experiment, RowsCoverEveryEpoch) {
  const auto c = tiny();
  const auto r = han::run_experiment(c, 1);
  // 6 algorithms x 3 replications x epochs 0..3.
  EXPECT_EQ(r.rows.size(), 6U * 3U * 4U);
  for (std::size_t k = 1; k < r.rows.size(); ++k) {
    const auto& a = r.rows[k - 1];
    const auto& b = r.rows[k];
    const auto key_a = std::make_tuple(static_cast<int>(a.algorithm), a.ablated, a.replication, a.epoch);
    const auto key_b = std::make_tuple(static_cast<int>(b.algorithm), b.ablated, b.replication, b.epoch);
    EXPECT_LT(key_a, key_b);
  }
  const auto csv = han::accuracy_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "algorithm,ablated,replication,epoch,accuracy");
  const auto summary = han::summary_csv(r);
  EXPECT_EQ(summary.substr(0, summary.find('\n')),
            "algorithm,ablated,epoch,replications,mean,sd,q05,median,q95,mean_ci90_low,mean_ci90_high");
}

TEST(Experiment, IndependentOfWorkerCount) {
  const auto c = tiny();
  const auto one = han::run_experiment(c, 1);
  const auto three = han::run_experiment(c, 3);
  EXPECT_EQ(han::accuracy_csv(one), han::accuracy_csv(three));
  EXPECT_EQ(han::summary_csv(one), han::summary_csv(three));
  EXPECT_EQ(han::summary_json(one).dump(), han::summary_json(three).dump());
}

TEST(Experiment, SeedChangesResults) {
  auto c = tiny();
  const auto a = han::run_experiment(c, 1);
  c.seed = 6;
  const auto b = han::run_experiment(c, 1);
  EXPECT_NE(han::accuracy_csv(a), han::accuracy_csv(b));
}

TEST(Experiment, PerceptronPreset) {
  auto c = tiny(han::Preset::Figure3Perceptron);
  const auto r = han::run_experiment(c, 1);
  std::set<std::string> algorithms;
  for (const auto& row : r.rows) algorithms.insert(std::string(han::to_string(row.algorithm)));
  EXPECT_EQ(algorithms, (std::set<std::string>{"han_ewa", "han_pwa", "perceptron"}));
}

TEST(Ablation, SubsetsAreDistinctFeatures) {
  const auto c = han::preset_config(han::Preset::Table1Ablation);
  for (std::size_t k = 0; k <= 5; ++k) {
    for (std::size_t r = 0; r < 20; ++r) {
      const auto s = han::ablation_subset(c, k, r);
      ASSERT_EQ(s.size(), k);
      const std::set<int> unique(s.begin(), s.end());
      ASSERT_EQ(unique.size(), k);
      for (int f : s) {
        ASSERT_GE(f, 0);
        ASSERT_LT(f, 6);
      }
    }
  }
  // C(6, 1) = 6 subsets visited once each in the first 6 replications.
  std::set<int> singles;
  for (std::size_t r = 0; r < 6; ++r) singles.insert(han::ablation_subset(c, 1, r)[0]);
  EXPECT_EQ(singles.size(), 6U);
}

TEST(Ablation, RemovesNeuronsPerVariant) {
  auto c = tiny(han::Preset::Table1Ablation);
  c.ablation_counts = {2};
  c.replications = 1;
  const auto r = han::run_experiment(c, 1);
  for (const auto& d : r.diagnostics) {
    const std::size_t expected = han::variant_of(d.algorithm) == han::Variant::Han ? 2 * 4 : 8;
    ASSERT_EQ(d.final_weights.per_output[0].size(), expected) << han::to_string(d.algorithm);
    EXPECT_EQ(d.ablated_features.size(), 2U);
  }
}

TEST(WeightTrace, StrideOfMKeepsFirstAndLast) {
  auto c = tiny(han::Preset::Custom);
  c.replications = 1;
  c.weight_trace_stride = c.rounds;
  const auto r = han::run_experiment(c, 1);
  ASSERT_EQ(r.weight_traces.size(), 1U);
  std::istringstream in(r.weight_traces[0]);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("round,A:Circle+,A:Square+", 0), 0U);
  EXPECT_NE(header.find("B:Red-"), std::string::npos);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 2U);
  EXPECT_EQ(lines[0].rfind("0,", 0), 0U);
  EXPECT_EQ(lines[1].rfind("27,", 0), 0U);
}

TEST(Results, WritesAndReplacesOwnDirectoryOnly) {
  const fs::path root = fs::temp_directory_path() / "han_harness_test";
  fs::remove_all(root);
  fs::create_directories(root);
  auto c = tiny(han::Preset::Custom);
  c.replications = 1;
  const auto r = han::run_experiment(c, 1);
  const fs::path out = root / "run";
  han::write_results(r, out);
  for (const char* name : {"config.json", "accuracy.csv", "summary.csv", "summary.json", "timings.json"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
  std::ifstream csv(out / "accuracy.csv");
  std::stringstream text;
  text << csv.rdbuf();
  EXPECT_EQ(text.str(), han::accuracy_csv(r));
  EXPECT_NO_THROW(han::write_results(r, out));

  const fs::path foreign = root / "foreign";
  fs::create_directories(foreign);
  std::ofstream(foreign / "keep.txt") << "mine";
  EXPECT_THROW(han::write_results(r, foreign), han::ConfigError);
  EXPECT_TRUE(fs::exists(foreign / "keep.txt"));
  for (const auto& entry : fs::directory_iterator(root)) {
    EXPECT_EQ(entry.path().filename().string().find(".partial"), std::string::npos);
  }
  fs::remove_all(root);
}

TEST(Summary, CarriesConfigHash) {
  auto c = tiny(han::Preset::Custom);
  c.replications = 2;
  const auto r = han::run_experiment(c, 1);
  const auto s = han::summary_json(r);
  EXPECT_EQ(s.at("config_hash"), han::git_blob_sha1(s.at("config").dump(2) + "\n"));
  EXPECT_EQ(s.at("config_hash").get<std::string>().size(), 40U);
}

TEST(Sha1, GitBlobHashes) {
  EXPECT_EQ(han::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(han::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Numbers, QuantileAndFormat) {
  EXPECT_DOUBLE_EQ(han::quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(han::quantile({1.0, 2.0, 3.0, 4.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(han::quantile({1.0, 2.0}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(han::quantile({1.0, 2.0}, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(han::quantile({0.0, 10.0}, 0.05), 0.5);
  EXPECT_EQ(han::format_number(0.123456789012), "0.123456789");
  EXPECT_EQ(han::format_number(1.0), "1");
}

}  // namespace
