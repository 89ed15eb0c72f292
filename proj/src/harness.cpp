#include "stiefel_lora/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <thread>

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

namespace {

// Independent generator streams derived from one seed.
constexpr std::uint64_t kTeacherStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kBatchStream = 3;

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void digest_matrix(std::uint64_t& h, const Matrix& m) {
  for (double x : m.data()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) {
      h ^= bits & 0xffU;
      h *= kFnvPrime;
      bits >>= 8;
    }
  }
}

Matrix tanh_inplace(Matrix m) {
  for (double& x : m.data()) x = std::tanh(x);
  return m;
}

void check_hyper(const char* name, double lr, const RunConfig& c) {
  AdamHyper h{lr, c.beta1, c.beta2, c.eps, c.weight_decay};
  try {
    h.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
}

struct LayerState {
  AdamState a;
  AdamState b;
};

}  // namespace

std::string_view to_string(Optimizer optimizer) {
  switch (optimizer) {
    case Optimizer::stiefel: return "stiefel";
    case Optimizer::adam: return "adam";
    case Optimizer::adamw: return "adamw";
  }
  return "?";
}

Optimizer parse_optimizer(std::string_view text) {
  if (text == "stiefel") return Optimizer::stiefel;
  if (text == "adam") return Optimizer::adam;
  if (text == "adamw") return Optimizer::adamw;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected stiefel|adam|adamw)");
}

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::constant ? "constant" : "linear";
}

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "constant") return LrSchedule::constant;
  if (text == "linear") return LrSchedule::linear;
  throw ConfigError("unknown lr_schedule '" + std::string(text) + "' (expected constant|linear)");
}

AdapterOptions RunConfig::adapter_options() const {
  AdapterOptions o;
  o.rank = r;
  o.alpha = resolved_alpha();
  o.mode = b_mode();
  o.variant = variant;
  o.train_a = train_a;
  o.rslora = rslora;
  return o;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d == 0 || k == 0) fail("d and k must be >= 1");
  const std::size_t max_rank = std::min(d, k);
  if (r == 0 || r > max_rank)
    fail("r = " + std::to_string(r) + " must be in [1, min(d, k) = " + std::to_string(max_rank) + "]");
  if (r_star == 0 || r_star > max_rank)
    fail("r_star = " + std::to_string(r_star) + " must be in [1, min(d, k) = " +
         std::to_string(max_rank) + "]");
  if (alpha && (!std::isfinite(*alpha) || *alpha <= 0.0))
    fail("alpha must be finite and > 0, got " + format_double(*alpha));
  check_hyper("lr", lr, *this);
  check_hyper("stiefel_lr", stiefel_lr, *this);
  if (optimizer == Optimizer::stiefel && weight_decay != 0.0)
    fail("weight_decay must be 0 for the stiefel optimizer (B has unit-norm columns), got " +
         format_double(weight_decay));
  if (steps < 1) fail("steps must be >= 1, got " + std::to_string(steps));
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (metrics_every < 1) fail("metrics_every must be >= 1, got " + std::to_string(metrics_every));
  if (depth < 1) fail("depth must be >= 1");
  for (std::size_t rank : ranks) {
    if (rank == 0 || rank > max_rank)
      fail("ranks entry " + std::to_string(rank) + " must be in [1, " + std::to_string(max_rank) + "]");
  }
}

TeacherTask make_teacher(std::size_t d, std::size_t k, std::size_t r_star, double magnitude,
                         Rng& rng) {
  if (r_star == 0 || r_star > std::min(d, k)) {
    throw ConfigError("make_teacher: r_star = " + std::to_string(r_star) +
                      " must be in [1, min(d, k) = " + std::to_string(std::min(d, k)) + "]");
  }
  if (!std::isfinite(magnitude) || magnitude < 0.0) {
    throw ConfigError("make_teacher: magnitude must be finite and >= 0");
  }
  TeacherTask task;
  task.r_star = r_star;
  task.w0 = gaussian_matrix(d, k, rng) * (1.0 / std::sqrt(static_cast<double>(k)));
  const StiefelPoint u = random_stiefel(d, r_star, rng);
  const StiefelPoint v = random_stiefel(k, r_star, rng);
  task.delta_star = matmul_nt(u.value(), v.value()) * magnitude;
  task.w_star = task.w0 + task.delta_star;
  return task;
}

TeacherNetwork make_teacher_network(const RunConfig& config, double magnitude, Rng& rng) {
  TeacherNetwork net;
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::size_t in = l == 0 ? config.k : config.d;
    net.layers.push_back(make_teacher(config.d, in, config.r_star, magnitude, rng));
  }
  return net;
}

Matrix teacher_forward(const TeacherNetwork& teacher, const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l < teacher.layers.size(); ++l) {
    h = matmul(teacher.layers[l].w_star, h);
    if (l + 1 < teacher.layers.size()) h = tanh_inplace(std::move(h));
  }
  return h;
}

LossResult loss_and_upstream(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "loss_and_upstream");
  const double n = static_cast<double>(pred.cols());
  Matrix diff = pred - target;
  double sq = 0.0;
  for (double x : diff.data()) sq += x * x;
  return {sq / (2.0 * n), diff * (1.0 / n)};
}

Matrix network_forward(const std::vector<LoraAdapter>& adapters, const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    h = forward(adapters[l], h);
    if (l + 1 < adapters.size()) h = tanh_inplace(std::move(h));
  }
  return h;
}

NetworkGradients network_gradients(const std::vector<LoraAdapter>& adapters, const Matrix& x,
                                   const Matrix& target) {
  const std::size_t depth = adapters.size();
  if (depth == 0) throw ConfigError("network_gradients: empty adapter stack");

  // inputs[l] is what layer l consumes; for l > 0 it is a tanh output.
  std::vector<Matrix> inputs{x};
  Matrix h = x;
  for (std::size_t l = 0; l < depth; ++l) {
    h = forward(adapters[l], h);
    if (l + 1 < depth) {
      h = tanh_inplace(std::move(h));
      inputs.push_back(h);
    }
  }
  LossResult lr = loss_and_upstream(h, target);

  NetworkGradients out;
  out.loss = lr.loss;
  out.layers.resize(depth, AdapterGradients{Matrix(1, 1), Matrix(1, 1)});
  Matrix up = std::move(lr.upstream);
  for (std::size_t l = depth; l-- > 0;) {
    out.layers[l] = gradients(adapters[l], inputs[l], up);
    if (l > 0) {
      up = input_gradient(adapters[l], up);
      const auto act = inputs[l].data();
      auto u = up.data();
      for (std::size_t i = 0; i < u.size(); ++i) u[i] *= 1.0 - act[i] * act[i];
    }
  }
  return out;
}

TrainResult train(const RunConfig& config) {
  config.validate();
  Rng teacher_rng(config.seed, kTeacherStream);
  return train(config, make_teacher_network(config, kDefaultTeacherMagnitude, teacher_rng));
}

TrainResult train(const RunConfig& config, const TeacherNetwork& teacher) {
  config.validate();
  if (teacher.layers.size() != config.depth) {
    throw ConfigError("train: teacher has " + std::to_string(teacher.layers.size()) +
                      " layers, config depth is " + std::to_string(config.depth));
  }

  TrainResult result;
  result.optimizer = config.optimizer;
  result.batch_digest = kFnvOffset;

  Rng init_rng(config.seed, kInitStream);
  Rng batch_rng(config.seed, kBatchStream);
  const AdapterOptions options = config.adapter_options();

  std::vector<LayerState> states;
  for (const auto& layer : teacher.layers) {
    result.adapters.push_back(init_adapter(layer.w0, options, init_rng));
    const auto& ad = result.adapters.back();
    states.push_back({AdamState::zeros_like(ad.a()), AdamState::zeros_like(ad.b())});
  }
  const std::size_t depth = result.adapters.size();
  result.losses.reserve(static_cast<std::size_t>(config.steps));

  for (std::int64_t t = 1; t <= config.steps; ++t) {
    std::size_t layer_ctx = 0;
    try {
      const Matrix x = gaussian_matrix(config.k, config.batch_size, batch_rng);
      digest_matrix(result.batch_digest, x);
      const Matrix target = teacher_forward(teacher, x);

      NetworkGradients ng = network_gradients(result.adapters, x, target);
      if (!std::isfinite(ng.loss)) {
        throw NumericalError("non-finite loss " + format_double(ng.loss));
      }
      result.losses.push_back(ng.loss);
      auto& grads = ng.layers;

      const double factor = lr_factor(config.lr_schedule, t, config.steps);
      AdamHyper euclid{config.lr * factor, config.beta1, config.beta2, config.eps,
                       config.optimizer == Optimizer::adamw ? config.weight_decay : 0.0};
      AdamHyper manifold{config.stiefel_lr * factor, config.beta1, config.beta2, config.eps, 0.0};

      for (std::size_t l = 0; l < depth; ++l) {
        layer_ctx = l;
        LoraAdapter& ad = result.adapters[l];
        LayerState& st = states[l];
        if (ad.train_a()) {
          AdamUpdate ua = config.optimizer == Optimizer::adamw
                              ? adamw_step(st.a, ad.a(), grads[l].grad_a, euclid)
                              : adam_step(st.a, ad.a(), grads[l].grad_a, euclid);
          ad.set_a(std::move(ua.param));
          st.a = std::move(ua.state);
        }
        switch (config.optimizer) {
          case Optimizer::stiefel: {
            StiefelUpdate ub = stiefel_adam_step(st.b, ad.b_point(), grads[l].grad_b, manifold);
            ad.set_b(std::move(ub.point));
            st.b = std::move(ub.state);
            break;
          }
          case Optimizer::adam: {
            AdamUpdate ub = adam_step(st.b, ad.b(), grads[l].grad_b, euclid);
            ad.set_b(std::move(ub.param));
            st.b = std::move(ub.state);
            break;
          }
          case Optimizer::adamw: {
            AdamUpdate ub = adamw_step(st.b, ad.b(), grads[l].grad_b, euclid);
            ad.set_b(std::move(ub.param));
            st.b = std::move(ub.state);
            break;
          }
        }
      }

      if (t % config.metrics_every == 0 || t == config.steps) {
        for (std::size_t l = 0; l < depth; ++l) {
          layer_ctx = l;
          result.timeline.push_back(snapshot(result.adapters[l], t, ng.loss, l));
        }
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw NumericalError("training step " + std::to_string(t) + ", layer " +
                           std::to_string(layer_ctx) + ": " + e.what());
    }
  }
  return result;
}

std::vector<MetricsRecord> final_records(const std::vector<MetricsRecord>& timeline) {
  std::vector<MetricsRecord> out;
  if (timeline.empty()) return out;
  const std::int64_t last = timeline.back().step;
  for (const auto& r : timeline)
    if (r.step == last) out.push_back(r);
  return out;
}

MetricsRecord final_layer_mean(const std::vector<MetricsRecord>& timeline) {
  const auto last = final_records(timeline);
  MetricsRecord mean;
  if (last.empty()) return mean;
  mean.step = last.front().step;
  mean.loss = last.front().loss;
  for (const auto& r : last) {
    mean.ortho_error_b += r.ortho_error_b;
    mean.eff_rank_b += r.eff_rank_b;
    mean.eff_rank_a += r.eff_rank_a;
    mean.eff_rank_dw += r.eff_rank_dw;
    mean.cos_mean += r.cos_mean;
    mean.cos_std += r.cos_std;
  }
  const double n = static_cast<double>(last.size());
  mean.ortho_error_b /= n;
  mean.eff_rank_b /= n;
  mean.eff_rank_a /= n;
  mean.eff_rank_dw /= n;
  mean.cos_mean /= n;
  mean.cos_std /= n;
  return mean;
}

CompareResult compare(const RunConfig& config) {
  RunConfig stiefel_cfg = config;
  stiefel_cfg.optimizer = Optimizer::stiefel;
  stiefel_cfg.weight_decay = 0.0;
  RunConfig adamw_cfg = config;
  adamw_cfg.optimizer = Optimizer::adamw;
  stiefel_cfg.validate();
  adamw_cfg.validate();
  return {train(stiefel_cfg), train(adamw_cfg)};
}

SweepResult sweep_rank(const RunConfig& config, unsigned workers) {
  if (config.ranks.empty()) throw ConfigError("sweep-rank: config lists no ranks");
  const std::vector<std::uint64_t> seeds =
      config.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : config.seeds;

  std::vector<RunConfig> jobs;
  for (std::size_t rank : config.ranks) {
    for (std::uint64_t seed : seeds) {
      RunConfig c = config;
      c.r = rank;
      c.seed = seed;
      c.ranks.clear();
      c.seeds.clear();
      c.weight_decay = config.weight_decay;
      RunConfig s = c;
      s.optimizer = Optimizer::stiefel;
      s.weight_decay = 0.0;
      s.validate();
      c.optimizer = Optimizer::adamw;
      c.validate();
      jobs.push_back(s);
      jobs.push_back(c);
    }
  }

  std::vector<SweepRun> runs(jobs.size());
  std::vector<std::exception_ptr> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const TrainResult tr = train(jobs[i]);
        runs[i] = {jobs[i].r, jobs[i].optimizer, jobs[i].seed,
                   final_layer_mean(tr.timeline).eff_rank_dw, tr.final_loss()};
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (workers == 0) workers = std::max(1U, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  SweepResult result;
  result.runs = runs;
  for (std::size_t rank : config.ranks) {
    for (Optimizer opt : {Optimizer::stiefel, Optimizer::adamw}) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : runs) {
        if (r.rank == rank && r.optimizer == opt) {
          sum += r.eff_rank_dw;
          ++n;
        }
      }
      result.aggregates.push_back({rank, opt, sum / static_cast<double>(n)});
    }
  }
  return result;
}

}  // namespace stiefel_lora
