// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "stiefel_lora/adapters.hpp"
#include "stiefel_lora/diagnostics.hpp"
#include "stiefel_lora/harness.hpp"
#include "stiefel_lora/manifold.hpp"
#include "stiefel_lora/optim.hpp"

using namespace stiefel_lora;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pinned tolerances.
constexpr double kOrthoTol = 1e-8;
constexpr double kTrainBudgetS = 30.0;
constexpr double kEffRankBTol = 1e-6;
constexpr double kSweepSlack = 0.5;
constexpr int kSweepMinWins = 7;
constexpr double kSweepBudgetS = 300.0;
constexpr double kCosTol = 1e-8;
constexpr double kIdentityRankTol = 1e-12;
constexpr double kSpectrumTol = 1e-10;
constexpr double kScaleTol = 1e-10;
constexpr double kRetractZeroTol = 1e-14;
constexpr double kRatioLow = 3.6;
constexpr double kRatioHigh = 4.4;
constexpr double kGradTol = 1e-6;
constexpr double kFdStep = 1e-6;
constexpr double kAdamTol = 1e-12;
constexpr double kStiefelTraceTol = 1e-10;
constexpr double kQrAgreeTol = 1e-10;
constexpr double kQrResidualTol = 1e-12;

const fs::path kScratch = TEST_SCRATCH_DIR;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  if (!out.pass) ++failures;
  std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << name << " ("
            << out.detail << ")" << std::endl;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path write_config(const std::string& name, const json& doc) {
  fs::create_directories(kScratch);
  const fs::path p = kScratch / name;
  std::ofstream(p) << doc.dump() << '\n';
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(STIEFEL_LORA_CLI) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int cli_run(const std::string& sub, const fs::path& config, const fs::path& out) {
  fs::remove_all(out);
  return cli(sub + " --config " + config.string() + " --out " + out.string());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shared by criteria 1 and 2: the default stiefel train run.
struct DefaultTrain {
  int exit_code = -1;
  double seconds = 0.0;
  std::vector<MetricsRecord> records;
};

const DefaultTrain& default_train() {
  static const DefaultTrain run = [] {
    DefaultTrain r;
    const fs::path cfg = write_config("default_stiefel.json", json{{"optimizer", "stiefel"}});
    const auto start = std::chrono::steady_clock::now();
    r.exit_code = cli_run("train", cfg, kScratch / "default_train");
    r.seconds = seconds_since(start);
    if (r.exit_code == 0) r.records = load_metrics_csv((kScratch / "default_train" / "metrics.csv").string());
    return r;
  }();
  return run;
}

Outcome orthogonality() {
  const DefaultTrain& run = default_train();
  if (run.exit_code != 0) return {false, "train exited " + std::to_string(run.exit_code)};
  double worst = 0.0;
  for (const auto& r : run.records) worst = std::max(worst, r.ortho_error_b);
  const bool ok = !run.records.empty() && worst < kOrthoTol && run.seconds < kTrainBudgetS;
  return {ok, "max ortho_error_b " + num(worst) + " over " + std::to_string(run.records.size()) +
                  " records, " + num(run.seconds) + " s"};
}

Outcome effective_rank_b() {
  const DefaultTrain& run = default_train();
  if (run.exit_code != 0) return {false, "train exited " + std::to_string(run.exit_code)};
  double worst = 0.0;
  for (const auto& r : run.records) worst = std::max(worst, std::abs(r.eff_rank_b - 8.0));
  return {!run.records.empty() && worst < kEffRankBTol, "max |eff_rank_b - 8| " + num(worst)};
}

Outcome effective_rank_dw_sweep() {
  json seeds = json::array();
  for (int s = 0; s < 10; ++s) seeds.push_back(s);
  const fs::path cfg =
      write_config("sweep.json", json{{"r_star", 16}, {"ranks", {4, 8}}, {"seeds", seeds}});
  const fs::path out = kScratch / "sweep";
  const auto start = std::chrono::steady_clock::now();
  const int code = cli_run("sweep-rank", cfg, out);
  const double secs = seconds_since(start);
  if (code != 0) return {false, "sweep-rank exited " + std::to_string(code)};

  // rank -> seed -> {stiefel, adamw}
  std::map<int, std::map<int, std::pair<double, double>>> runs;
  std::istringstream lines(slurp(out / "rank_sweep_runs.csv"));
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    std::stringstream ss(line);
    std::string rank, opt, seed, eff;
    std::getline(ss, rank, ',');
    std::getline(ss, opt, ',');
    std::getline(ss, seed, ',');
    std::getline(ss, eff, ',');
    auto& slot = runs[std::stoi(rank)][std::stoi(seed)];
    (opt == "stiefel" ? slot.first : slot.second) = std::stod(eff);
  }
  std::map<int, double> means;
  std::istringstream agg(slurp(out / "rank_sweep.csv"));
  std::getline(agg, line);
  while (std::getline(agg, line)) {
    std::stringstream ss(line);
    std::string rank, opt, mean;
    std::getline(ss, rank, ',');
    std::getline(ss, opt, ',');
    std::getline(ss, mean, ',');
    if (opt == "stiefel") means[std::stoi(rank)] = std::stod(mean);
  }

  bool ok = secs < kSweepBudgetS;
  std::string detail;
  for (int r : {4, 8}) {
    int wins = 0;
    for (const auto& [seed, pair] : runs[r]) wins += pair.first >= pair.second;
    const bool rank_ok = means.count(r) && means[r] >= r - kSweepSlack &&
                         runs[r].size() == 10 && wins >= kSweepMinWins;
    ok = ok && rank_ok;
    detail += "r=" + std::to_string(r) + " stiefel mean " + num(means[r]) + ", wins " +
              std::to_string(wins) + "/10; ";
  }
  return {ok, detail + num(secs) + " s"};
}

Outcome cosine_similarity() {
  const fs::path cfg = write_config("default_compare.json", json::object());
  const fs::path out = kScratch / "compare";
  const int code = cli_run("compare", cfg, out);
  if (code != 0) return {false, "compare exited " + std::to_string(code)};
  const json doc = json::parse(slurp(out / "comparison.json"));
  double worst = 0.0;
  for (const auto& layer : doc.at("stiefel").at("layers")) {
    worst = std::max(worst, std::abs(layer.at("cos_mean").get<double>()));
    worst = std::max(worst, layer.at("cos_std").get<double>());
  }
  const double adamw_std = doc.at("adamw").at("final_cos_std").get<double>();
  return {worst < kCosTol && adamw_std > 0.0,
          "stiefel max |cos| stat " + num(worst) + ", adamw cos_std " + num(adamw_std)};
}

Outcome effective_rank_oracle() {
  bool ok = true;
  for (std::size_t n : {1, 4, 16})
    ok = ok && std::abs(effective_rank(Matrix::identity(n)) - static_cast<double>(n)) <
                   kIdentityRankTol;
  const Matrix outer = oracle::product(Matrix{{1}, {-2}, {0.5}}, Matrix{{3, 1, -1, 2}});
  const double one = effective_rank(outer);
  ok = ok && std::abs(one - 1.0) < kIdentityRankTol;
  const double hand = std::exp(-(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25)));
  const double spectral = effective_rank(Matrix{{2, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  ok = ok && std::abs(spectral - hand) < kSpectrumTol;
  ok = ok && effective_rank(Matrix(4, 3)) == 0.0;
  std::mt19937_64 gen(5);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Matrix m = oracle::random_matrix(7, 5, gen);
    for (double c : {1e-3, 3.0, 1e3})
      worst = std::max(worst, std::abs(effective_rank(c * m) - effective_rank(m)));
  }
  ok = ok && worst < kScaleTol;
  return {ok, "(2,1,1) -> " + num(spectral) + ", rank-1 -> " + num(one) + ", scale drift " +
                  num(worst)};
}

Outcome retraction_contract() {
  Rng rng(6);
  double zero_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    const StiefelPoint b = random_stiefel(20, 6, rng);
    zero_err = std::max(zero_err, max_abs_diff(retract_qr(b, Matrix(20, 6)).value(), b.value()));
  }
  std::mt19937_64 gen(6);
  double lo = 1e300, hi = 0.0;
  const double step = 1e-2;
  for (int t = 0; t < 50; ++t) {
    const StiefelPoint b = random_stiefel(20, 6, rng);
    Matrix xi = project_tangent(b, oracle::random_matrix(20, 6, gen)).direction;
    xi *= 1.0 / oracle::frob(xi);
    auto err = [&](double s) {
      return oracle::frob(retract_qr(b, s * xi).value() - (b.value() + s * xi));
    };
    const double ratio = err(step) / err(step / 2);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  const bool ok = zero_err <= kRetractZeroTol && lo >= kRatioLow && hi <= kRatioHigh;
  return {ok, "zero-step max entry error " + num(zero_err) + ", ratio range [" + num(lo) + ", " +
                  num(hi) + "]"};
}

Outcome gradient_oracle() {
  std::mt19937_64 gen(7);
  double worst = 0.0;
  int trials = 0;
  for (Variant variant : {Variant::lora, Variant::dora}) {
    for (bool train_a : {true, false}) {
      for (int t = 0; t < 50; ++t, ++trials) {
        AdapterOptions opt;
        opt.rank = 2;
        opt.alpha = 4.0;
        opt.mode = BMode::euclidean;
        opt.variant = variant;
        opt.train_a = train_a;
        std::vector<double> mag;
        if (variant == Variant::dora) {
          std::uniform_real_distribution<double> u(0.5, 2.0);
          for (int j = 0; j < 3; ++j) mag.push_back(u(gen));
        }
        const LoraAdapter ad(oracle::random_matrix(4, 3, gen), oracle::random_matrix(2, 3, gen),
                             oracle::random_matrix(4, 2, gen), opt, mag);
        const Matrix x = oracle::random_matrix(3, 5, gen);
        const Matrix u = oracle::random_matrix(4, 5, gen);
        std::optional<std::vector<double>> m;
        if (variant == Variant::dora) m = mag;
        auto loss = [&](const Matrix& a, const Matrix& b) {
          const Matrix y =
              oracle::product(oracle::adapter_weight(ad.w0(), a, b, ad.scaling(), m), x);
          double acc = 0.0;
          for (std::size_t i = 0; i < y.size(); ++i) acc += u.data()[i] * y.data()[i];
          return acc;
        };
        const AdapterGradients g = gradients(ad, x, u);
        const Matrix fd_b = oracle::central_difference(
            [&](const Matrix& b) { return loss(ad.a(), b); }, ad.b(), kFdStep);
        worst = std::max(worst, oracle::max_relative_error(g.grad_b, fd_b));
        if (train_a) {
          const Matrix fd_a = oracle::central_difference(
              [&](const Matrix& a) { return loss(a, ad.b()); }, ad.a(), kFdStep);
          worst = std::max(worst, oracle::max_relative_error(g.grad_a, fd_a));
        } else if (!(g.grad_a == Matrix(2, 3))) {
          return {false, "static-A gradient for A is not zero"};
        }
      }
    }
  }
  return {worst < kGradTol, std::to_string(trials) + " trials, max relative error " + num(worst)};
}

Outcome optimizer_oracle() {
  AdamHyper h;
  h.lr = 0.1;
  const auto a = adam_step(AdamState::zeros_like(Matrix{{0}}), Matrix{{0}}, Matrix{{1}}, h);
  const double adam_err = std::abs(a.param(0, 0) - (-0.0999999990));

  h.lr = 0.3;
  const StiefelPoint b(Matrix{{1}, {0}, {0}});
  const auto s = stiefel_adam_step(AdamState::zeros_like(b.value()), b, Matrix{{0}, {1}, {0}}, h);
  // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1, M' = 1 / (1 + eps) in row 1, already tangent.
  const double y = -0.3 / (1.0 + 1e-8);
  const double n = std::sqrt(1.0 + y * y);
  const double want[3] = {1.0 / n, y / n, 0.0};
  double stiefel_err = 0.0;
  for (int i = 0; i < 3; ++i)
    stiefel_err = std::max(stiefel_err, std::abs(s.point.value()(i, 0) - want[i]));
  return {adam_err < kAdamTol && stiefel_err < kStiefelTraceTol,
          "adam error " + num(adam_err) + ", stiefel error " + num(stiefel_err)};
}

Outcome qr_oracle() {
  std::mt19937_64 gen(9);
  std::uniform_int_distribution<std::size_t> cols_dist(1, 16);
  double agree = 0.0, residual = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t cols = cols_dist(gen);
    const std::size_t rows = std::uniform_int_distribution<std::size_t>(cols, 64)(gen);
    const Matrix m = oracle::random_matrix(rows, cols, gen);
    const auto got = qr_positive(m);
    const Matrix q = qf(m);
    agree = std::max(agree, max_abs_diff(q, oracle::mgs(m).q));
    residual = std::max(residual, oracle::frob(oracle::product(got.q, got.r) - m) / oracle::frob(m));
  }
  return {agree < kQrAgreeTol && residual < kQrResidualTol,
          "max Q difference " + num(agree) + ", max relative residual " + num(residual)};
}

Outcome determinism() {
  const json small = {{"d", 16}, {"k", 8},          {"r", 4},   {"r_star", 4},
                      {"steps", 120}, {"batch_size", 8}, {"depth", 2}, {"metrics_every", 20}};
  const fs::path cfg = write_config("det.json", small);
  json sweep = small;
  sweep["ranks"] = {2, 4};
  sweep["seeds"] = {0, 1};
  const fs::path sweep_cfg = write_config("det_sweep.json", sweep);

  struct Check {
    std::string sub;
    fs::path config;
    std::vector<std::string> files;
  };
  const std::vector<Check> checks = {
      {"train", cfg, {"metrics.csv"}},
      {"compare", cfg, {"metrics_stiefel.csv", "metrics_adamw.csv"}},
      {"sweep-rank", sweep_cfg, {"rank_sweep.csv", "rank_sweep_runs.csv"}},
  };
  int compared = 0;
  for (const Check& c : checks) {
    const fs::path a = kScratch / ("det_" + c.sub + "_a");
    const fs::path b = kScratch / ("det_" + c.sub + "_b");
    if (cli_run(c.sub, c.config, a) != 0 || cli_run(c.sub, c.config, b) != 0)
      return {false, c.sub + " failed to run"};
    for (const auto& f : c.files) {
      if (slurp(a / f).empty() || slurp(a / f) != slurp(b / f))
        return {false, c.sub + " " + f + " differs"};
      ++compared;
    }
  }
  const fs::path ckpt = kScratch / "det_train_a" / "checkpoint";
  const fs::path da = kScratch / "det_diagnose_a", db = kScratch / "det_diagnose_b";
  if (cli_run("diagnose", ckpt, da) != 0 || cli_run("diagnose", ckpt, db) != 0)
    return {false, "diagnose failed to run"};
  if (slurp(da / "metrics.csv") != slurp(db / "metrics.csv"))
    return {false, "diagnose metrics.csv differs"};
  ++compared;
  return {true, std::to_string(compared) + " CSV files byte-identical across two executions"};
}

Outcome static_a() {
  RunConfig c;
  c.train_a = false;
  Rng teacher_rng(c.seed, 1);
  const TeacherNetwork teacher = make_teacher_network(c, kDefaultTeacherMagnitude, teacher_rng);
  Rng init_rng(c.seed, 2);
  std::vector<Matrix> initial;
  for (const auto& layer : teacher.layers)
    initial.push_back(init_adapter(layer.w0, c.adapter_options(), init_rng).a());
  const TrainResult r = train(c, teacher);
  bool same = true;
  for (std::size_t l = 0; l < c.depth; ++l) same = same && r.adapters[l].a() == initial[l];
  for (std::size_t i = c.depth; i < r.timeline.size(); ++i)
    same = same && r.timeline[i].eff_rank_a == r.timeline[i % c.depth].eff_rank_a;
  double worst = 0.0;
  for (const auto& rec : r.timeline) worst = std::max(worst, rec.ortho_error_b);
  return {same && worst < kOrthoTol,
          std::string("A ") + (same ? "bit-identical" : "changed") + ", max ortho_error_b " +
              num(worst)};
}

}  // namespace

int main() {
  report(1, "orthogonality preserved in default stiefel training", orthogonality);
  report(2, "effective rank of B equals r at every snapshot", effective_rank_b);
  report(3, "effective rank of dW across the rank sweep", effective_rank_dw_sweep);
  report(4, "column cosine statistics stiefel vs adamw", cosine_similarity);
  report(5, "effective rank oracle", effective_rank_oracle);
  report(6, "retraction contract", retraction_contract);
  report(7, "adapter gradient oracle", gradient_oracle);
  report(8, "optimizer oracle", optimizer_oracle);
  report(9, "QR oracle", qr_oracle);
  report(10, "determinism of every subcommand", determinism);
  report(11, "static-A mode", static_a);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
