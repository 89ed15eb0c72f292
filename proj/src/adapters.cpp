#include "stiefel_lora/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

namespace {

std::vector<double> column_norms(const Matrix& m) {
  std::vector<double> norms(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) norms[j] += row[j] * row[j];
  }
  for (double& n : norms) n = std::sqrt(n);
  return norms;
}

// Pre-normalization direction V = W0 + s B A and its column norms.
struct DoraDirection {
  Matrix v;
  std::vector<double> norms;
};

DoraDirection dora_direction(const LoraAdapter& ad) {
  DoraDirection out{ad.w0() + delta_weight(ad), {}};
  out.norms = column_norms(out.v);
  for (std::size_t j = 0; j < out.norms.size(); ++j) {
    if (out.norms[j] < kDoraMinColumnNorm) {
      throw DegenerateError("dora: column " + std::to_string(j) + " of W0 + sBA has norm " +
                            format_double(out.norms[j]) + " below " +
                            format_double(kDoraMinColumnNorm));
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(BMode mode) { return mode == BMode::stiefel ? "stiefel" : "euclidean"; }
std::string_view to_string(Variant variant) { return variant == Variant::lora ? "lora" : "dora"; }

BMode parse_b_mode(std::string_view text) {
  if (text == "stiefel") return BMode::stiefel;
  if (text == "euclidean") return BMode::euclidean;
  throw ConfigError("unknown B mode '" + std::string(text) + "' (expected stiefel|euclidean)");
}

Variant parse_variant(std::string_view text) {
  if (text == "lora") return Variant::lora;
  if (text == "dora") return Variant::dora;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected lora|dora)");
}

LoraAdapter::LoraAdapter(Matrix w0, Matrix a, std::variant<Matrix, StiefelPoint> b,
                         AdapterOptions options, std::vector<double> dora_magnitude)
    : w0_(std::move(w0)),
      a_(std::move(a)),
      b_(std::move(b)),
      options_(options),
      dora_magnitude_(std::move(dora_magnitude)) {
  const std::size_t d = w0_.rows();
  const std::size_t k = w0_.cols();
  const std::size_t r = options_.rank;
  if (r == 0 || r > std::min(d, k)) {
    throw ConfigError("adapter rank " + std::to_string(r) + " must be in [1, min(d, k)] = [1, " +
                      std::to_string(std::min(d, k)) + "]");
  }
  if (!std::isfinite(options_.alpha) || options_.alpha <= 0.0) {
    throw ConfigError("adapter alpha must be finite and > 0, got " + format_double(options_.alpha));
  }
  if (a_.rows() != r || a_.cols() != k) {
    throw ShapeError("adapter: A is " + a_.shape_string() + ", expected " + std::to_string(r) +
                     "x" + std::to_string(k));
  }
  const bool holds_point = std::holds_alternative<StiefelPoint>(b_);
  if (holds_point != (options_.mode == BMode::stiefel)) {
    throw ConfigError("adapter: B representation does not match mode " +
                      std::string(to_string(options_.mode)));
  }
  const Matrix& bm = this->b();
  if (bm.rows() != d || bm.cols() != r) {
    throw ShapeError("adapter: B is " + bm.shape_string() + ", expected " + std::to_string(d) +
                     "x" + std::to_string(r));
  }
  if (options_.variant == Variant::dora) {
    if (dora_magnitude_.size() != k) {
      throw ShapeError("adapter: dora magnitude has " + std::to_string(dora_magnitude_.size()) +
                       " entries, expected " + std::to_string(k));
    }
  } else if (!dora_magnitude_.empty()) {
    throw ConfigError("adapter: magnitude vector given for a plain lora adapter");
  }
  scaling_ = options_.rslora ? options_.alpha / std::sqrt(static_cast<double>(r))
                             : options_.alpha / static_cast<double>(r);
}

const Matrix& LoraAdapter::b() const {
  if (const auto* p = std::get_if<StiefelPoint>(&b_)) return p->value();
  return std::get<Matrix>(b_);
}

const StiefelPoint& LoraAdapter::b_point() const {
  if (const auto* p = std::get_if<StiefelPoint>(&b_)) return *p;
  throw ConfigError("adapter: B is not constrained to the Stiefel manifold");
}

void LoraAdapter::set_a(Matrix a) {
  require_same_shape(a_, a, "LoraAdapter::set_a");
  a_ = std::move(a);
}

void LoraAdapter::set_b(Matrix b) {
  if (options_.mode == BMode::stiefel) {
    set_b(StiefelPoint(std::move(b)));
    return;
  }
  require_same_shape(this->b(), b, "LoraAdapter::set_b");
  b_ = std::move(b);
}

void LoraAdapter::set_b(StiefelPoint b) {
  require_same_shape(this->b(), b.value(), "LoraAdapter::set_b");
  if (options_.mode == BMode::stiefel) {
    b_ = std::move(b);
  } else {
    b_ = b.value();
  }
}

LoraAdapter init_adapter(const Matrix& w0, const AdapterOptions& options, Rng& rng) {
  const std::size_t d = w0.rows();
  const std::size_t k = w0.cols();
  const std::size_t r = options.rank;
  if (r == 0 || r > std::min(d, k)) {
    throw ConfigError("init_adapter: rank " + std::to_string(r) + " exceeds min(d, k) = " +
                      std::to_string(std::min(d, k)));
  }

  std::variant<Matrix, StiefelPoint> b = Matrix(d, r);
  if (options.mode == BMode::stiefel) {
    b = random_stiefel(d, r, rng);
  } else {
    b = gaussian_matrix(d, r, rng) * (1.0 / std::sqrt(static_cast<double>(d)));
  }

  Matrix a = options.train_a
                 ? Matrix(r, k)
                 : gaussian_matrix(r, k, rng) * (1.0 / std::sqrt(static_cast<double>(r)));

  std::vector<double> magnitude;
  if (options.variant == Variant::dora) magnitude = column_norms(w0);

  return LoraAdapter(w0, std::move(a), std::move(b), options, std::move(magnitude));
}

Matrix delta_weight(const LoraAdapter& ad) {
  return matmul(ad.b(), ad.a()) * ad.scaling();
}

Matrix effective_weight(const LoraAdapter& ad) {
  if (ad.variant() == Variant::lora) return ad.w0() + delta_weight(ad);

  DoraDirection dir = dora_direction(ad);
  const auto& mag = ad.dora_magnitude();
  for (std::size_t i = 0; i < dir.v.rows(); ++i) {
    auto row = dir.v.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] *= mag[j] / dir.norms[j];
  }
  return std::move(dir.v);
}

Matrix forward(const LoraAdapter& ad, const Matrix& x) {
  if (x.rows() != ad.in_dim()) {
    throw ShapeError("forward: input is " + x.shape_string() + ", expected " +
                     std::to_string(ad.in_dim()) + " rows");
  }
  if (ad.variant() == Variant::dora) return matmul(effective_weight(ad), x);
  Matrix out = matmul(ad.w0(), x);
  out += matmul(ad.b(), matmul(ad.a(), x)) * ad.scaling();
  return out;
}

AdapterGradients gradients(const LoraAdapter& ad, const Matrix& x, const Matrix& upstream) {
  if (x.rows() != ad.in_dim() || upstream.rows() != ad.out_dim() || x.cols() != upstream.cols()) {
    throw ShapeError("gradients: input " + x.shape_string() + " and upstream " +
                     upstream.shape_string() + " do not fit a " + ad.w0().shape_string() +
                     " adapter");
  }
  // dLoss/dW for the applied weight.
  Matrix g = matmul_nt(upstream, x);

  if (ad.variant() == Variant::dora) {
    // W_j = m_j V_j / |V_j|  =>  dL/dV_j = (m_j / |V_j|) (G_j - V_j <V_j, G_j> / |V_j|^2)
    const DoraDirection dir = dora_direction(ad);
    const auto& mag = ad.dora_magnitude();
    const std::size_t k = g.cols();
    std::vector<double> proj(k, 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < k; ++j) proj[j] += dir.v(i, j) * g(i, j);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double n = dir.norms[j];
        g(i, j) = mag[j] / n * (g(i, j) - dir.v(i, j) * proj[j] / (n * n));
      }
    }
  }

  AdapterGradients out{Matrix(ad.rank(), ad.in_dim()), matmul_nt(g, ad.a()) * ad.scaling()};
  if (ad.train_a()) out.grad_a = matmul_tn(ad.b(), g) * ad.scaling();
  return out;
}

Matrix input_gradient(const LoraAdapter& ad, const Matrix& upstream) {
  if (upstream.rows() != ad.out_dim()) {
    throw ShapeError("input_gradient: upstream is " + upstream.shape_string() + ", expected " +
                     std::to_string(ad.out_dim()) + " rows");
  }
  if (ad.variant() == Variant::dora) return matmul_tn(effective_weight(ad), upstream);
  Matrix out = matmul_tn(ad.w0(), upstream);
  out += matmul_tn(ad.a(), matmul_tn(ad.b(), upstream)) * ad.scaling();
  return out;
}

}  // namespace stiefel_lora
