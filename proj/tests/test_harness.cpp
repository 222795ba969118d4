#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "icfem/config.hpp"
#include "icfem/dataset.hpp"
#include "icfem/report.hpp"
#include "icfem/study.hpp"

using namespace icfem;
namespace fs = std::filesystem;

namespace {

RunConfig parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

ErrorCode parse_error_code(const std::string& text) {
  try {
    parse_text(text);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a parse failure");
  return ErrorCode::ParseError;
}

SimStudyConfig small_study(int replicates) {
  RunConfig run = parse_text(cortisol_config_text());
  SimStudyConfig cfg = study_config_from(run);
  cfg.settings.replicates = replicates;
  cfg.settings.individuals = 12;
  cfg.settings.lr_samples = 200;
  cfg.fit.max_iter = 25;
  cfg.fit.schedule.warmup = 5;
  cfg.fit.chain.chain_length = 60;
  cfg.fit.chain.burn_in = 10;
  return cfg;
}

struct Command {
  int exit_code = -1;
  std::string output;
};

Command run_cli(const std::string& args) {
  const char* cli = std::getenv("ICFEM_CLI");
  REQUIRE(cli != nullptr);
  const std::string cmd = std::string(cli) + " " + args + " 2>&1";
  Command out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 512> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) out.output += buf.data();
  const int status = pclose(pipe);
  out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("icfem_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("qq data") {
  const auto qq = qq_data({0.9, 0.1});
  REQUIRE(qq.size() == 2);
  CHECK(qq[0] == std::pair<double, double>{0.25, 0.1});
  CHECK(qq[1] == std::pair<double, double>{0.75, 0.9});
  CHECK(qq_data({}).empty());
  CHECK_THROWS_AS(qq_data({0.5, 1.5}), Error);
  CHECK_THROWS_AS(qq_data({-0.1}), Error);
}

TEST_CASE("summary statistics") {
  const std::vector<double> v{1.0, 2.0, 4.0, 7.0};
  const Summary s = summarise(v, 3.0);
  CHECK(s.count == 4);
  CHECK(s.mean == doctest::Approx(3.5));
  CHECK(s.se == doctest::Approx(std::sqrt(5.25)));
  CHECK(s.rmqe * s.rmqe == doctest::Approx(0.25 + 5.25).epsilon(1e-12));

  const Summary zero = summarise({0.0, 0.0, 0.0}, 0.0);
  CHECK(zero.mean == 0.0);
  CHECK(zero.rmqe == 0.0);
}

TEST_CASE("table parameter order") {
  const auto names = table_parameter_names(4, 1);
  const std::vector<std::string> want{"Sigma11", "Sigma12", "Sigma22", "Sigma13", "Sigma23",
                                      "Sigma33", "Sigma14", "Sigma24", "Sigma34", "Sigma44",
                                      "m1",      "m2",      "m3",      "m4",      "sigma2"};
  CHECK(names == want);

  MatrixXd s = MatrixXd::Identity(2, 2);
  s(0, 1) = s(1, 0) = 0.5;
  const FitParams p{(VectorXd(2) << 3, 4).finished(), SpdMatrix(s), VectorXd::Constant(1, 0.1)};
  CHECK(table_parameter_values(p) == std::vector<double>{1.0, 0.5, 1.0, 3.0, 4.0, 0.1});
}

TEST_CASE("cortisol configuration") {
  const RunConfig run = parse_text(cortisol_config_text());
  CHECK(run.model.name == "cortisol");
  CHECK(run.model.doses.size() == 7);
  CHECK(run.init.m == (VectorXd(4) << 50, 70, 1, 0.1).finished());
  CHECK(run.init.sigma.matrix() == MatrixXd((VectorXd(4) << 25, 49, 0.01, 0.0001).finished().asDiagonal()));
  CHECK(run.init.theta(0) == 0.04);
  CHECK(run.pattern.one_based() == std::vector<std::pair<int, int>>{{1, 4}, {3, 4}});
  CHECK(run.mcem.chain.chain_length == 500);
  CHECK(run.mcem.max_iter == 400);
  CHECK(run.mcem.schedule.b == 0.8);
  REQUIRE(run.has_study);
  CHECK(run.study.replicates == 20);
  CHECK(run.study.individuals == 30);
  CHECK(run.study.truth.sigma(0, 0) == 20.0);
  CHECK(run.study.truth.sigma(3, 1) == -0.002);
  CHECK(run.study.truth.sigma(3, 0) == 0.0);
  CHECK(run.study.truth.sigma.conforms(run.pattern));
  CHECK(run.study.estimators.size() == 3);
}

TEST_CASE("configuration parsing helpers and errors") {
  CHECK(parse_pairs("(1,4) (3,4)") == std::vector<std::pair<int, int>>{{1, 4}, {3, 4}});
  CHECK(parse_pairs("1-4, 3-4") == std::vector<std::pair<int, int>>{{1, 4}, {3, 4}});
  CHECK_THROWS_AS(parse_pairs("(1,"), Error);

  const MatrixXd lower = parse_covariance({1, 0.5, 2}, 2);
  const MatrixXd full = parse_covariance({1, 0.5, 0.5, 2}, 2);
  CHECK(lower == full);
  CHECK_THROWS_AS(parse_covariance({1, 2}, 2), Error);

  CHECK(parse_error_code("[model]\nname cortisol\n") == ErrorCode::ParseError);
  CHECK(parse_error_code("[mcem]\nmax_iter = many\n") == ErrorCode::ParseError);
  CHECK(parse_error_code("[init]\nm = 1 2 3\n") == ErrorCode::ParseError);
  CHECK_THROWS_AS(parse_text("[pattern]\npairs = (1,1)\n"), Error);
}

TEST_CASE("small simulation study is deterministic and keeps constrained rows at zero") {
  const CortisolModel model;
  const SimStudyConfig cfg = small_study(2);
  const SimStudyReport a = run_simulation_study(model, cfg);
  const SimStudyReport b = run_simulation_study(model, cfg);
  CHECK(study_report_json(a).dump() == study_report_json(b).dump());

  REQUIRE(a.rows.size() == 16);
  CHECK(a.rows.back().name == "loglik");
  CHECK_FALSE(a.rows.back().truth.has_value());
  CHECK(a.replicates.size() == 2);
  CHECK(a.p_values.size() == 2);

  for (const auto& row : a.rows) {
    if (row.name != "Sigma14" && row.name != "Sigma34") continue;
    const Summary& icf = row.by_estimator.at(Estimator::EmIcf);
    CHECK(icf.count == 2);
    CHECK(icf.mean == 0.0);
    CHECK(icf.se == 0.0);
    CHECK(icf.rmqe == 0.0);
    const Summary& zf = row.by_estimator.at(Estimator::ZeroForced);
    CHECK(zf.mean == 0.0);
  }

  std::ostringstream table;
  write_table1_csv(table, a);
  std::istringstream lines(table.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "param,true,em_mean,em_se,em_rmqe,icf_mean,icf_se,icf_rmqe");
  int n = 0;
  for (std::string line; std::getline(lines, line);) ++n;
  CHECK(n == 16);
}

TEST_CASE("empty estimator list gives no rows") {
  const CortisolModel model;
  SimStudyConfig cfg = small_study(1);
  cfg.settings.estimators.clear();
  const SimStudyReport r = run_simulation_study(model, cfg);
  CHECK(r.rows.empty());
  CHECK(r.p_values.empty());
}

TEST_CASE("cli: icf on the 3x3 example") {
  const fs::path dir = scratch_dir("icf");
  std::ofstream(dir / "x.csv") << "4,-3,3\n-3,4,-3\n3,-3,4\n";
  const Command c = run_cli("icf --xtilde " + (dir / "x.csv").string() + " --pattern '(1,3)'");
  CHECK(c.exit_code == 0);
  const auto j = nlohmann::json::parse(c.output);
  CHECK(j["objective"].get<double>() == doctest::Approx(6.129263666178513).epsilon(1e-12));
  CHECK(j["sigma"][0][2].get<double>() == 0.0);
  CHECK(j["sigma"][1][1].get<double>() == doctest::Approx(142.0 / 49.0).epsilon(1e-9));
}

TEST_CASE("cli: malformed data is an input error with the row number") {
  const fs::path dir = scratch_dir("bad");
  std::ofstream(dir / "bad.csv") << "id,obs_index,design_value,y\n1,1,0.005,50\n1,2,0.01,x\n";
  const Command c = run_cli("fit --data " + (dir / "bad.csv").string() + " --config " +
                            (fs::path(std::getenv("ICFEM_DATA_DIR")) / "cortisol.ini").string() +
                            " --out-dir " + (dir / "out").string());
  CHECK(c.exit_code == 1);
  CHECK(c.output.find("row 3") != std::string::npos);

  const Command usage = run_cli("fit --data");
  CHECK(usage.exit_code == 1);
}

TEST_CASE("cli: simulate then fit writes the reports") {
  const fs::path dir = scratch_dir("fit");
  const fs::path cfg = dir / "run.ini";
  {
    std::string text = cortisol_config_text();
    auto set = [&](const std::string& key, const std::string& value) {
      const auto pos = text.find(key + " = ");
      REQUIRE(pos != std::string::npos);
      const auto end = text.find('\n', pos);
      text.replace(pos, end - pos, key + " = " + value);
    };
    set("max_iter", "15");
    set("warmup", "3");
    set("chain_length", "50");
    set("burn_in", "10");
    set("loglik_samples", "300");
    std::ofstream(cfg) << text;
  }
  const Command sim = run_cli("simulate --config " + cfg.string() + " -n 10 --seed 3 --out " + (dir / "d.csv").string());
  REQUIRE(sim.exit_code == 0);
  CHECK(read_dataset_csv(dir / "d.csv").size() == 10);

  const Command fit = run_cli("fit --no-se --data " + (dir / "d.csv").string() + " --config " + cfg.string() +
                              " --out-dir " + (dir / "out").string());
  REQUIRE(fit.exit_code == 0);
  std::ifstream in(dir / "out" / "report.json");
  const auto report = nlohmann::json::parse(in);
  CHECK(report["params"]["sigma"][3][0].get<double>() == 0.0);
  CHECK(report["params"]["sigma"][3][2].get<double>() == 0.0);
  CHECK(report["lr"]["df"].get<int>() == 2);
  CHECK(report["iterations"].get<int>() == 15);
  CHECK(fs::exists(dir / "out" / "trace.csv"));
  CHECK(fs::exists(dir / "out" / "trace_unconstrained.csv"));
}
