#include <doctest.h>

#include <Eigen/Core>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <algorithm>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "nsedit/checkpoint.hpp"
#include "nsedit/config.hpp"
#include "nsedit/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsedit;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(NSEDIT_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Checkpoints also record wall time, so compare the stored tensors.
bool same_parameters(const fs::path& a, const fs::path& b) {
  const CheckpointData x = read_checkpoint(a), y = read_checkpoint(b);
  if (x.tensors.size() != y.tensors.size()) return false;
  for (std::size_t i = 0; i < x.tensors.size(); ++i) {
    if (x.tensors[i].first != y.tensors[i].first || !(x.tensors[i].second == y.tensors[i].second)) return false;
  }
  return x.meta.at("step") == y.meta.at("step") && x.meta.at("rng") == y.meta.at("rng");
}

json metric(const json& report, const std::string& name) {
  for (const auto& m : report.at("metrics"))
    if (m.at("metric") == name) return m;
  FAIL("metric missing: " << name);
  return {};
}

// Synthetic data plus a briefly trained small model, built once per process.
struct Fixture {
  fs::path root, data, config, run_dir, checkpoint;

  Fixture() {
    root = fs::temp_directory_path() / ("nsedit_test_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    data = root / "data";
    config = root / "train.json";
    run_dir = root / "run";
    TrainConfig c;
    c.model.feature_width = 8;
    c.model.disc_width = 4;
    c.model.mapping_width = 16;
    c.batch_size = 2;
    c.diversity.num_samples = 2;
    c.total_steps = 2;
    save_json(config, to_json(c));
    const Run s = run("synth --out " + data.string() + " --count 12 --resolution 32 --seed 1");
    REQUIRE_MESSAGE(s.code == 0, s.output);
    const Run t = run("train --config " + config.string() + " --data " + data.string() + " --out " + run_dir.string() +
                      " --seed 3");
    REQUIRE_MESSAGE(t.code == 0, t.output);
    checkpoint = run_dir / "checkpoint.nsed";
    REQUIRE(fs::exists(checkpoint));
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("--help exits 0 for the tool and every subcommand") {
  CHECK(run("--help").code == 0);
  for (const char* sub : {"train", "eval", "profile", "serve", "sample", "synth"}) {
    const Run r = run(std::string(sub) + " --help");
    CHECK_MESSAGE(r.code == 0, sub);
    CHECK(r.output.find("--") != std::string::npos);
  }
}

TEST_CASE("usage errors exit 1, runtime errors exit 2") {
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("train --data x").code == 1);  // --out missing
  CHECK(run("eval --checkpoint /nonexistent/ck.nsed --data d --out o").code == 1);

  const fs::path missing = fs::temp_directory_path() / "nsedit_no_such_dir_4711";
  const Run r = run("train --data " + missing.string() + " --out " +
                    (fs::temp_directory_path() / "nsedit_cli_never").string() + " --steps 1");
  CHECK(r.code == 2);
  CHECK(r.output.find(missing.string()) != std::string::npos);
}

TEST_CASE("train --steps 0 writes the initialization and echoes the config") {
  const Fixture& f = fixture();
  const fs::path out = f.root / "init";
  const Run r = run("train --config " + f.config.string() + " --data " + f.data.string() + " --out " + out.string() +
                    " --steps 0 --seed 9");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const CheckpointData ck = read_checkpoint(out / "checkpoint.nsed");
  CHECK(ck.meta.at("step") == 0);
  const TrainConfig cfg = load_train_config(out / "config.json");
  CHECK(cfg.seed == 9);
  CHECK(cfg.total_steps == 0);
  CHECK(cfg.model.feature_width == 8);

  // A fresh model with the same seed has the same parameters.
  const Run again = run("train --config " + f.config.string() + " --data " + f.data.string() + " --out " +
                        (f.root / "init2").string() + " --steps 0 --seed 9");
  REQUIRE(again.code == 0);
  CHECK(same_parameters(out / "checkpoint.nsed", f.root / "init2" / "checkpoint.nsed"));
}

TEST_CASE("training is reproducible under a pinned seed") {
  const Fixture& f = fixture();
  const fs::path out = f.root / "repeat";
  const Run r = run("train --config " + f.config.string() + " --data " + f.data.string() + " --out " + out.string() +
                    " --seed 3");
  REQUIRE(r.code == 0);
  CHECK(same_parameters(out / "checkpoint.nsed", f.checkpoint));
  CHECK(fs::exists(out / "metrics.jsonl"));
}

TEST_CASE("profile: one row per scale, zero spread gives zeros, seeds reproduce") {
  const Fixture& f = fixture();
  auto profile = [&](const std::string& name, const std::string& extra) {
    const fs::path out = f.root / name;
    const Run r = run("profile --checkpoint " + f.checkpoint.string() + " --data " + f.data.string() + " --out " +
                      out.string() + " --conditions 3 --codes 3 " + extra);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(out / "config.json"));
    return load_json(out / "profile.json").at("profile").get<std::vector<double>>();
  };
  const std::vector<double> a = profile("prof_a", "--seed 4");
  CHECK(a.size() == 4);
  const std::string csv = slurp(f.root / "prof_a" / "profile.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  for (double v : a) CHECK(v > 0.0);
  const std::vector<double> b = profile("prof_b", "--seed 4");
  CHECK(a == b);
  CHECK(slurp(f.root / "prof_a" / "profile.csv") == slurp(f.root / "prof_b" / "profile.csv"));
  const std::vector<double> zero = profile("prof_zero", "--seed 4 --spread 0");
  for (double v : zero) CHECK(v == 0.0);
}

TEST_CASE("eval: metric report, K=1 shortest equals mean, larger K never worse") {
  const Fixture& f = fixture();
  auto eval = [&](const std::string& name, int K) {
    const fs::path out = f.root / name;
    const Run r = run("eval --checkpoint " + f.checkpoint.string() + " --data " + f.data.string() + " --out " +
                      out.string() + " --samples-per-input " + std::to_string(K) + " --seed 5");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(out / "config.json"));
    return load_json(out / "report.json");
  };
  const json k1 = eval("eval_k1", 1);
  CHECK(metric(k1, "shortest_distance").at("value").get<double>() ==
        doctest::Approx(metric(k1, "mean_distance").at("value").get<double>()).epsilon(1e-12));
  CHECK(metric(k1, "fid").at("value").get<double>() >= 0.0);
  const json k2 = eval("eval_k2", 2);
  const json k4 = eval("eval_k4", 4);
  const double s1 = metric(k1, "shortest_distance").at("value");
  const double s2 = metric(k2, "shortest_distance").at("value");
  const double s4 = metric(k4, "shortest_distance").at("value");
  CHECK(s2 <= s1);
  CHECK(s4 <= s2);
  CHECK(metric(k4, "pairwise_diversity").at("value").get<double>() > 0.0);
  CHECK(metric(k4, "recovery_count").at("value").get<double>() == doctest::Approx(100.0));
  CHECK(fs::exists(f.root / "eval_k4" / "samples"));
  const json again = eval("eval_k4b", 4);
  CHECK(again.at("metrics") == k4.at("metrics"));
}

TEST_CASE("sample: grid dimensions and reproducibility") {
  const Fixture& f = fixture();
  auto sample = [&](const std::string& name, const std::string& extra) {
    const fs::path out = f.root / name;
    const Run r = run("sample --checkpoint " + f.checkpoint.string() + " --data " + f.data.string() + " --out " +
                      out.string() + " --seed 6 " + extra);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    return out;
  };
  const fs::path a = sample("grid_a", "--samples-per-input 3 --inputs 2");
  const fs::path b = sample("grid_b", "--samples-per-input 3 --inputs 2");
  const Tensor grid = read_png(a / "grid.png", 3);
  const Tensor single = make_grid(std::vector<Tensor>(6, Tensor({3, 32, 32})), 2, 3);
  CHECK(grid.shape() == single.shape());
  CHECK(grid.dim(1) > grid.dim(2) / 3);  // two rows of three tiles
  CHECK(slurp(a / "grid.png") == slurp(b / "grid.png"));
  const fs::path s = sample("scales", "--samples-per-input 2 --inputs 1 --mode scales");
  const Tensor sheet = read_png(s / "scales_000.png", 3);
  CHECK(sheet.shape() == make_grid(std::vector<Tensor>(8, Tensor({3, 32, 32})), 4, 2).shape());
}

TEST_CASE("serve: health reports the checkpoint on the requested port") {
  const Fixture& f = fixture();
  CHECK(run("serve --checkpoint /nonexistent/ck.nsed --port 0").code == 2);
  const fs::path bogus = f.root / "bogus.nsed";
  std::ofstream(bogus) << "not a checkpoint";
  CHECK(run("serve --checkpoint " + bogus.string() + " --port 0").code == 2);

  const int port = 20000 + static_cast<int>(::getpid() % 20000);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    const std::string port_s = std::to_string(port);
    const std::string ck = f.checkpoint.string();
    if (!std::freopen("/dev/null", "w", stdout)) _exit(126);
    execl(NSEDIT_CLI_PATH, NSEDIT_CLI_PATH, "serve", "--checkpoint", ck.c_str(), "--port", port_s.c_str(),
          static_cast<char*>(nullptr));
    _exit(127);
  }
  httplib::Client cli("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 200 && !res; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    res = cli.Get("/v1/health");
  }
  REQUIRE(res);
  CHECK(res->status == 200);
  const json h = json::parse(res->body);
  CHECK(h.at("status") == "ok");
  CHECK(h.at("checkpoint") == file_fingerprint(f.checkpoint));
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}
