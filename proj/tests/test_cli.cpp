#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xbo/cli.hpp"

namespace xbo {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "xbo");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_file(const std::string& stem) {
  std::random_device rd;
  return fs::temp_directory_path() / (stem + "-" + std::to_string(rd()) + ".jsonl");
}

TEST(CliCook, ChickenReferenceIsPerfect) {
  const auto r = run({"cook", "--mass", "50", "--lambda", "27", "--ywr", "0.9", "--t-egg", "12", "--t-yolk", "63",
                      "--altitude", "5"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "278.9 s, Perfect\n");
}

TEST(CliCook, NonPerfectExitsOne) {
  const auto r = run({"cook", "--mass", "70"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out, "349.0 s, Overcooked\n");
}

TEST(CliCook, OutOfBoundsExitsTwo) {
  const auto r = run({"cook", "--altitude", "20000"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("altitude_m"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST(CliCook, YolkTargetAboveBoilingIsUncookable) {
  const auto r = run({"cook", "--t-yolk", "95", "--altitude", "10000"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("boiling point"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bake"}).code, 2);
  EXPECT_EQ(run({"cook", "--mass", "heavy"}).code, 2);
  EXPECT_EQ(run({"cook", "--help"}).code, 0);
}

TEST(CliExplain, RulesMatchPinnedSeedGolden) {
  const auto r = run({"explain", "--scenario", "chicken", "--seed", "1", "--format", "rules"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, read_file(fs::path(XBO_TEST_DATA) / "explain_chicken_seed1.txt"));
  const auto lang = run({"explain", "--scenario", "chicken", "--seed", "1", "--format", "language"});
  EXPECT_EQ(lang.out, read_file(fs::path(XBO_TEST_DATA) / "explain_chicken_seed1_language.txt"));
}

void expect_rule_set_schema(const nlohmann::json& j) {
  ASSERT_TRUE(j.contains("rules"));
  ASSERT_TRUE(j["rules"].is_array());
  auto rules = j["rules"];
  rules.push_back(j["applied_rule"]);
  for (const auto& rule : rules) {
    ASSERT_EQ(rule["antecedent"].size(), 6u);
    for (const auto& [k, v] : rule["antecedent"].items()) {
      ASSERT_EQ(v.size(), 2u) << k;
      EXPECT_LE(v[0].get<double>(), v[1].get<double>());
    }
    ASSERT_EQ(rule["consequent"].size(), 2u);
    for (const char* m : {"covr", "supp", "con", "rel", "alpha"}) {
      const double x = rule[m].get<double>();
      EXPECT_GE(x, 0.0) << m;
      EXPECT_LE(x, 1.0) << m;
    }
    EXPECT_NEAR(rule["con"].get<double>() * rule["covr"].get<double>(), rule["supp"].get<double>(), 1e-12);
  }
  const auto& params = j["decision"]["parameters"];
  ASSERT_EQ(params.size(), 6u);
  for (const auto& p : params) {
    EXPECT_TRUE(p["tune"].is_boolean());
    EXPECT_EQ(p.contains("range"), p["tune"].get<bool>());
    EXPECT_GE(p["impact"].get<double>(), 0.0);
  }
  EXPECT_EQ(j["decision"]["predicted"].size(), 2u);
  EXPECT_EQ(j["recommendation"].size(), 6u);
}

TEST(CliExplain, JsonMatchesSchemaForSeveralSeeds) {
  for (const char* seed : {"1", "2", "3"}) {
    const auto r = run({"explain", "--scenario", "chicken", "--seed", seed, "--format", "json"});
    ASSERT_EQ(r.code, 0) << r.err;
    expect_rule_set_schema(nlohmann::json::parse(r.out));
  }
}

TEST(CliExplain, VisualIsBarSpec) {
  const auto r = run({"explain", "--scenario", "duck", "--seed", "4", "--format", "visual"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["bars"].size(), 6u);
}

TEST(CliExplain, ObservationFileReproducesScenarioRun) {
  const fs::path trace = temp_file("xbo-trace");
  const auto a = run({"explain", "--scenario", "chicken", "--seed", "7", "--trace-out", trace.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run({"explain", "--scenario", "chicken", "--seed", "7", "--observations", trace.string()});
  EXPECT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out, b.out);
  fs::remove(trace);
}

TEST(CliExplain, TooFewObservationsAdvisesBo) {
  const fs::path trace = temp_file("xbo-short");
  ASSERT_EQ(run({"explain", "--scenario", "chicken", "--seed", "7", "--trace-out", trace.string()}).code, 0);
  std::ifstream in(trace);
  std::string line, kept;
  for (int i = 0; i < 4 && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream(trace, std::ios::trunc) << kept;
  const auto r = run({"explain", "--observations", trace.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Run BO first"), std::string::npos) << r.err;
  EXPECT_EQ(run({"explain", "--scenario", "chicken", "--budget", "4"}).code, 2);
  EXPECT_EQ(run({"explain"}).code, 2);
  EXPECT_EQ(run({"explain", "--scenario", "dodo"}).code, 2);
  EXPECT_EQ(run({"explain", "--scenario", "chicken", "--format", "poem"}).code, 2);
  fs::remove(trace);
}

std::vector<std::vector<std::string>> csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

TEST(CliSimulate, SingleSeedIsSingleRow) {
  const auto r = run({"simulate", "--policy", "range-uniform", "--seeds", "0..0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][0], "seed");
  EXPECT_EQ(rows[1][0], "0");
  EXPECT_EQ(rows[1].size(), rows[0].size());
}

TEST(CliSimulate, IdenticalInvocationsGiveIdenticalBytes) {
  const auto a = run({"simulate", "--policy", "random", "--seeds", "3..12", "--condition", "visual"});
  const auto b = run({"simulate", "--policy", "random", "--seeds", "3..12", "--condition", "visual"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto rows = csv(a.out);
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows.back()[0], "all");
}

TEST(CliSimulate, ExplanationFollowingBeatsRangeUniform) {
  const auto follow = csv(run({"simulate", "--policy", "explanation-following", "--seeds", "0..199"}).out);
  const auto uniform = csv(run({"simulate", "--policy", "range-uniform", "--seeds", "0..199"}).out);
  ASSERT_EQ(follow.size(), 202u);
  const auto col = [&](const char* name) {
    return static_cast<std::size_t>(std::find(follow[0].begin(), follow[0].end(), name) - follow[0].begin());
  };
  const auto rate = col("treatment_success_rate");
  const auto trials = col("treatment_mean_trials_to_success");
  EXPECT_GT(std::stod(follow.back()[rate]), std::stod(uniform.back()[rate]));
  EXPECT_LT(std::stod(follow.back()[trials]), std::stod(uniform.back()[trials]));
}

TEST(CliSimulate, RejectsBadArguments) {
  EXPECT_EQ(run({"simulate", "--policy", "psychic"}).code, 2);
  EXPECT_EQ(run({"simulate"}).code, 2);
  EXPECT_EQ(run({"simulate", "--policy", "random", "--seeds", "5..2"}).code, 2);
  EXPECT_EQ(run({"simulate", "--policy", "random", "--condition", "smell"}).code, 2);
}

TEST(CliSensitivity, TableAndJson) {
  const auto table = run({"sensitivity", "--fraction", "0.1"});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("t_yolk_c"), std::string::npos);
  const auto r = run({"sensitivity", "--fraction", "0.1", "--json"});
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.size(), 6u);
  EXPECT_EQ(j[0]["parameter"], "t_yolk_c");
  for (const auto& e : j) {
    if (e["parameter"] == "lambda") EXPECT_NEAR(e["effect"].get<double>(), 0.10, 1e-12);
  }
}

TEST(CliSensitivity, FractionMustBePositive) {
  EXPECT_EQ(run({"sensitivity", "--fraction", "0"}).code, 2);
  EXPECT_EQ(run({"sensitivity", "--fraction", "-0.1"}).code, 2);
}

TEST(CliSensitivity, ScenarioBase) {
  const auto r = run({"sensitivity", "--scenario", "goose", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out).size(), 6u);
}

TEST(CliScenarios, ValidatesShippedFileAndRejectsBrokenOne) {
  const auto ok = run({"scenarios-validate", XBO_DEFAULT_SCENARIOS});
  EXPECT_EQ(ok.code, 0);
  EXPECT_NE(ok.out.find("ok: 7 scenarios"), std::string::npos);
  EXPECT_EQ(ok.out.find("optimal"), std::string::npos);

  auto doc = nlohmann::json::parse(read_file(XBO_DEFAULT_SCENARIOS));
  doc[0]["optimal"]["ywr"] = 0.41;
  const fs::path broken = temp_file("xbo-broken");
  std::ofstream(broken) << doc.dump();
  const auto bad = run({"scenarios-validate", broken.string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("ostrich"), std::string::npos) << bad.err;
  fs::remove(broken);
  EXPECT_EQ(run({"scenarios-validate"}).code, 2);
}

}  // namespace
}  // namespace xbo
