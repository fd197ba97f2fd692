#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "rectflow/csv.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "rectflow-cli-test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string err;
};

Run cli(const std::string& args) {
  const fs::path err = workdir() / "stderr.txt";
  const std::string cmd = fmt::format("'{}' {} > /dev/null 2> '{}'", RECTFLOW_CLI, args, err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

std::string out(const std::string& name) { return (workdir() / name).string(); }

const std::string kSmallFlow =
    "--set dataset.kind=labeled-clusters train.steps=150 flow.hidden=32,32 flow.time_features=8";
const std::string kSmallClassifier = "--set dataset.kind=labeled-clusters classifier.steps=150 classifier.hidden=16";

// Trained once and shared by the guidance commands below.
struct Models {
  std::string flow, clean, noisy;
};

const Models& models() {
  static const Models m = [] {
    Models r{out("flow") + "/model.ckpt", out("clean") + "/model.ckpt", out("noisy") + "/model.ckpt"};
    REQUIRE(cli(fmt::format("train --seed 3 --out {} {}", out("flow"), kSmallFlow)).code == 0);
    REQUIRE(cli(fmt::format("train --seed 3 --out {} {} train.model=clean-classifier", out("clean"),
                            kSmallClassifier))
                .code == 0);
    REQUIRE(cli(fmt::format("train --seed 3 --out {} {} train.model=noise-aware-classifier", out("noisy"),
                            kSmallClassifier))
                .code == 0);
    return r;
  }();
  return m;
}

std::string guide_args(const std::string& dir, const std::string& extra) {
  const Models& m = models();
  return fmt::format("guide --out {} --set guide.flow={} guide.classifier={} guide.noise_classifier={} guide.seeds=4 {}",
                     dir, m.flow, m.clean, m.noisy, extra);
}

}  // namespace

TEST_CASE("train is reproducible") {
  REQUIRE(cli(fmt::format("train --seed 5 --out {} {}", out("train_a"), kSmallFlow)).code == 0);
  REQUIRE(cli(fmt::format("train --seed 5 --out {} {}", out("train_b"), kSmallFlow)).code == 0);
  const auto a = nlohmann::json::parse(slurp(out("train_a") + "/summary.json"));
  const auto b = nlohmann::json::parse(slurp(out("train_b") + "/summary.json"));
  CHECK(a.at("checksum") == b.at("checksum"));
  CHECK(slurp(out("train_a") + "/model.ckpt") == slurp(out("train_b") + "/model.ckpt"));
  CHECK(slurp(out("train_a") + "/losses.csv") == slurp(out("train_b") + "/losses.csv"));
  const rectflow::CsvTable losses = rectflow::read_csv(out("train_a") + "/losses.csv");
  CHECK(losses.schema == "loss-curve");
  CHECK(losses.rows.size() == 150);
  CHECK(fs::exists(out("train_a") + "/losses.svg"));
  CHECK(slurp(out("train_a") + "/resolved_config.ini").find("seed = 5") != std::string::npos);
}

TEST_CASE("noise-aware classifier training writes an accuracy curve") {
  models();
  const rectflow::CsvTable t = rectflow::read_csv(out("noisy") + "/accuracy.csv");
  CHECK(t.schema == "accuracy-curve");
  CHECK(t.columns == std::vector<std::string>{"t", "accuracy"});
  CHECK(t.rows.size() >= 2);
}

TEST_CASE("configuration errors exit with status 2") {
  SUBCASE("missing dataset key is named") {
    const Run r = cli(fmt::format("train --out {} --set train.steps=5", out("bad")));
    CHECK(r.code == 2);
    CHECK(r.err.find("dataset.kind") != std::string::npos);
  }
  SUBCASE("unknown key") {
    const Run r = cli(fmt::format("train --out {} --set dataset.kind=checkerboard train.stepz=5", out("bad")));
    CHECK(r.code == 2);
    CHECK(r.err.find("train.stepz") != std::string::npos);
  }
  SUBCASE("unknown subcommand and flags") {
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("train --bogus").code == 2);
  }
  SUBCASE("config file") {
    const fs::path ini = workdir() / "train.ini";
    std::ofstream(ini) << "[dataset]\nkind = checkerboard\n[train]\nsteps = 3\n[flow]\nhidden = 8\n";
    CHECK(cli(fmt::format("train --config {} --out {}", ini.string(), out("from_ini"))).code == 0);
    CHECK(cli(fmt::format("train --config {} --out {}", out("missing.ini"), out("from_ini"))).code == 4);
  }
  SUBCASE("checkpoint of the wrong kind") {
    const Models& m = models();
    const Run r = cli(fmt::format("guide --out {} --set guide.flow={} guide.classifier={} guide.seeds=1",
                                  out("bad"), m.clean, m.clean));
    CHECK(r.code == 2);
  }
}

TEST_CASE("missing checkpoint exits with status 4") {
  const Run r = cli(fmt::format("guide --out {} --set guide.flow={}", out("bad"), out("nope.ckpt")));
  CHECK(r.code == 4);
}

TEST_CASE("guide at scale 0 returns the reference endpoints") {
  for (const char* method : {"anchored", "unanchored", "straight-anchored"}) {
    const std::string dir = out(fmt::format("g0_{}", method));
    REQUIRE(cli(guide_args(dir, fmt::format("guide.method={} guide.scale=0", method))).code == 0);
    if (std::string(method) != "unanchored") {
      CHECK(slurp(dir + "/endpoints.csv") == slurp(dir + "/reference_endpoints.csv"));
    }
    const rectflow::CsvTable runs = rectflow::read_csv(dir + "/runs.csv");
    CHECK(runs.rows.size() == 4);
  }
}

TEST_CASE("guide records default settings") {
  const std::string dir = out("g_defaults");
  REQUIRE(cli(guide_args(dir, "guide.method=noise-gd")).code == 0);
  const std::string ini = slurp(dir + "/resolved_config.ini");
  for (const char* line : {"scale = 1.0", "iterations = 100", "windows = 4", "learning_rate = 0.4",
                           "momentum = 0.9", "l2 = 1.0", "return_policy = best-objective"}) {
    CHECK_MESSAGE(ini.find(line) != std::string::npos, line);
  }
  const auto report = nlohmann::json::parse(slurp(dir + "/reports/seed_0.json"));
  CHECK(report.at("config").at("learning_rate") == 0.4);
  CHECK(report.at("config").at("momentum") == 0.9);
  CHECK(report.at("config").at("l2_coeff") == 1.0);
  CHECK(report.at("config").at("return_policy") == "last");

  const std::string anchored = out("g_defaults_anchored");
  REQUIRE(cli(guide_args(anchored, "guide.iterations=10")).code == 0);
  const auto a = nlohmann::json::parse(slurp(anchored + "/reports/seed_1.json"));
  CHECK(a.at("method") == "anchored");
  CHECK(a.at("config").at("scale") == 1.0);
  CHECK(a.at("config").at("windows") == 4);
  CHECK(a.at("config").at("return_policy") == "best-objective");
}

TEST_CASE("guide output is deterministic across runs and thread counts") {
  const std::string a = out("g_det_a"), b = out("g_det_b");
  REQUIRE(cli(guide_args(a, "guide.iterations=20 guide.threads=1")).code == 0);
  REQUIRE(cli(guide_args(b, "guide.iterations=20 guide.threads=0")).code == 0);
  for (const char* f : {"runs.csv", "residuals.csv", "endpoints.csv", "reference_endpoints.csv",
                        "trajectories/seed_2.csv", "reports/seed_3.json"}) {
    CHECK_MESSAGE(slurp(a + "/" + f) == slurp(b + "/" + f), f);
  }
  const rectflow::CsvTable res = rectflow::read_csv(a + "/residuals.csv");
  CHECK(res.schema == "residual-series");
  const rectflow::CsvTable traj = rectflow::read_csv(a + "/trajectories/seed_0.csv");
  CHECK(traj.schema == "trajectory");
  for (const char* svg : {"residuals.svg", "endpoints.svg", "trajectories.svg"}) CHECK(fs::exists(a + "/" + svg));
}

TEST_CASE("every guidance method runs") {
  for (const char* method : {"anchored", "unanchored", "straight-anchored", "noise-gd", "oracle-ode"}) {
    const std::string dir = out(fmt::format("g_m_{}", method));
    const Run r = cli(guide_args(dir, fmt::format("guide.method={} guide.iterations=10 guide.oracle_steps=50", method)));
    CHECK_MESSAGE((r.code == 0 || r.code == 3), method);
    const rectflow::CsvTable runs = rectflow::read_csv(dir + "/runs.csv");
    CHECK(runs.rows.size() == 4);
    for (const auto& row : runs.rows) CHECK(row[runs.column("method")] == method);
  }
}

TEST_CASE("ablate") {
  const Models& m = models();
  const std::string base = fmt::format(
      "ablate --set guide.flow={} guide.classifier={} guide.seeds=3 ablate.scales=0,0.5,1 ablate.iterations=5,10,20",
      m.flow, m.clean);
  const std::string a = out("ab_a"), b = out("ab_b");
  REQUIRE(cli(fmt::format("{} guide.threads=1 --out {}", base, a)).code == 0);
  REQUIRE(cli(fmt::format("{} guide.threads=0 --out {}", base, b)).code == 0);
  CHECK(slurp(a + "/ablation.csv") == slurp(b + "/ablation.csv"));
  CHECK(slurp(a + "/ablation_runs.csv") == slurp(b + "/ablation_runs.csv"));
  CHECK(fs::exists(a + "/ablation.svg"));

  const rectflow::CsvTable t = rectflow::read_csv(a + "/ablation.csv");
  CHECK(t.schema == "ablation");
  const auto row = t.column("row"), scale = t.column("scale"), mean = t.column("mean_objective");
  std::string baseline;
  std::map<std::string, std::vector<double>> by_scale;
  for (const auto& r : t.rows) {
    if (r[row] == "baseline") baseline = r[mean];
    else by_scale[r[scale]].push_back(std::stod(r[mean]));
  }
  REQUIRE_FALSE(baseline.empty());
  REQUIRE(by_scale.size() == 3);
  for (double v : by_scale.at("0")) CHECK(v == std::stod(baseline));
  // Best-objective over a longer prefix can only improve.
  for (const auto& [s, values] : by_scale) {
    for (std::size_t i = 1; i < values.size(); ++i) CHECK(values[i] >= values[i - 1]);
  }
  const rectflow::CsvTable runs = rectflow::read_csv(a + "/ablation_runs.csv");
  CHECK(runs.rows.size() == 3 * 3 * 3);

  CHECK(cli(fmt::format("{} --out {} --set ablate.scales=", base, out("ab_bad"))).code == 2);
  CHECK(cli(fmt::format("{} --out {} --set guide.method=noise-gd", base, out("ab_bad"))).code == 2);
}

TEST_CASE("props verdicts") {
  const std::string dir = out("props");
  REQUIRE(cli(fmt::format("props --out {}", dir)).code == 0);
  const rectflow::CsvTable t = rectflow::read_csv(dir + "/verdicts.csv");
  CHECK(t.schema == "prop-verdicts");
  const auto prop = t.column("proposition"), scale = t.column("scale"), diverged = t.column("diverged"),
             rate = t.column("measured_rate"), verdict = t.column("verdict");
  bool saw_div = false, saw_con = false;
  for (const auto& r : t.rows) {
    CHECK(r[verdict] == "pass");
    const double s = std::stod(r[scale]);
    if (r[prop] == "unanchored-divergence" && s == 0.5) {
      saw_div = true;
      CHECK(r[diverged] == "1");
    }
    if (r[prop] == "anchored-contraction" && s == 0.25) {
      saw_con = true;
      const double m = std::stod(r[rate]);
      CHECK(m >= 0.225);
      CHECK(m <= 0.275);
    }
  }
  CHECK(saw_div);
  CHECK(saw_con);
  CHECK(cli(fmt::format("props --out {} --set props.contraction_scales=", out("props_bad"))).code == 2);
  CHECK(cli(fmt::format("props --out {} --set props.divergence_scales=", out("props_bad"))).code == 2);
}

TEST_CASE("report") {
  const std::string g1 = out("rep_anchored"), g2 = out("rep_unanchored"), g3 = out("rep_straight");
  REQUIRE(cli(guide_args(g1, "guide.iterations=10")).code == 0);
  const int c2 = cli(guide_args(g2, "guide.method=unanchored guide.iterations=10")).code;
  REQUIRE((c2 == 0 || c2 == 3));
  REQUIRE(cli(guide_args(g3, "guide.method=straight-anchored guide.iterations=10")).code == 0);

  SUBCASE("single run") {
    const std::string dir = out("rep_one");
    REQUIRE(cli(fmt::format("report --out {} {}", dir, g1)).code == 0);
    const rectflow::CsvTable t = rectflow::read_csv(dir + "/comparison.csv");
    CHECK(t.schema == "comparison");
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0][t.column("method")] == "anchored");
    CHECK(t.rows[0][t.column("runs")] == "4");
    CHECK(fs::exists(dir + "/comparison.svg"));
  }
  SUBCASE("three methods aggregate per method") {
    const std::string dir = out("rep_three");
    REQUIRE(cli(fmt::format("report --out {} {} {} {} {}", dir, g1, g2, g3, g1)).code == 0);
    const rectflow::CsvTable t = rectflow::read_csv(dir + "/comparison.csv");
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0][t.column("runs")] == "8");
    CHECK(t.rows[1][t.column("runs")] == "4");
    CHECK(t.rows[2][t.column("runs")] == "4");
    // Mean over the guide's own rows.
    const rectflow::CsvTable runs = rectflow::read_csv(g3 + "/runs.csv");
    double sum = 0;
    for (const auto& r : runs.rows) sum += std::stod(r[runs.column("final_objective")]);
    CHECK(std::stod(t.rows[2][t.column("mean_final_objective")]) == doctest::Approx(sum / 4).epsilon(1e-12));
  }
  SUBCASE("mixed schema versions are rejected") {
    const std::string old = out("rep_old");
    fs::create_directories(old);
    std::string text = slurp(g1 + "/runs.csv");
    text.replace(text.find("version=1"), 9, "version=0");
    std::ofstream(old + "/runs.csv") << text;
    CHECK(cli(fmt::format("report --out {} {} {}", out("rep_mixed"), g1, old)).code == 4);
  }
  SUBCASE("wrong schema is rejected") {
    const std::string other = out("rep_other");
    fs::create_directories(other);
    fs::copy_file(g1 + "/residuals.csv", other + "/runs.csv", fs::copy_options::overwrite_existing);
    CHECK(cli(fmt::format("report --out {} {}", out("rep_bad"), other)).code == 4);
  }
  SUBCASE("no run directories") { CHECK(cli(fmt::format("report --out {}", out("rep_none"))).code == 2); }
}

TEST_CASE("output directory falls back to RECTFLOW_OUT") {
  const fs::path root = workdir() / "env-root";
  const std::string cmd = fmt::format("RECTFLOW_OUT='{}' '{}' props > /dev/null 2>&1", root.string(), RECTFLOW_CLI);
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(root / "props-seed0" / "verdicts.csv"));
}
