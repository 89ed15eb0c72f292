#include "stiefel_lora/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "stiefel_lora/errors.hpp"
#include "stiefel_lora/linalg.hpp"
#include "stiefel_lora/manifold.hpp"

namespace stiefel_lora {

namespace {

constexpr double kMinColumnNorm = 1e-300;

std::vector<double> checked_column_norms(const Matrix& b) {
  std::vector<double> norms(b.cols(), 0.0);
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) norms[j] += b(i, j) * b(i, j);
  for (std::size_t j = 0; j < norms.size(); ++j) {
    norms[j] = std::sqrt(norms[j]);
    if (!(norms[j] >= kMinColumnNorm)) {
      throw DegenerateError("cosine: column " + std::to_string(j) + " has zero norm");
    }
  }
  return norms;
}

}  // namespace

double effective_rank(const Matrix& m, double eps) {
  if (!(eps > 0.0)) throw ConfigError("effective_rank: eps must be > 0");
  const std::vector<double> sv = singular_values(m);

  std::vector<double> positive;
  for (double s : sv)
    if (s > eps) positive.push_back(s);
  if (positive.empty()) return 0.0;

  double total = 0.0;
  for (double s : positive) total += s;
  if (total < eps) return 0.0;

  double entropy = 0.0;
  for (double s : positive) {
    const double p = s / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

Matrix cosine_matrix(const Matrix& b) {
  const std::vector<double> norms = checked_column_norms(b);
  Matrix gram = matmul_tn(b, b);
  const std::size_t r = b.cols();
  Matrix out(r, r);
  for (std::size_t i = 0; i < r; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = i + 1; j < r; ++j) {
      const double c = gram(i, j) / (norms[i] * norms[j]);
      out(i, j) = c;
      out(j, i) = c;
    }
  }
  return out;
}

CosineStats cosine_stats(const Matrix& b) {
  if (b.cols() < 2) {
    throw ConfigError("cosine_stats: need at least 2 columns, got " + std::to_string(b.cols()));
  }
  const Matrix cos = cosine_matrix(b);
  const std::size_t r = b.cols();
  const double pairs = static_cast<double>(r * (r - 1) / 2);

  double sum = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + 1; j < r; ++j) sum += cos(i, j);
  const double mean = sum / pairs;

  double var = 0.0;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + 1; j < r; ++j) var += (cos(i, j) - mean) * (cos(i, j) - mean);
  return {mean, std::sqrt(var / pairs)};
}

MetricsRecord snapshot(const LoraAdapter& adapter, std::int64_t step, double loss,
                       std::size_t layer) {
  MetricsRecord rec;
  rec.step = step;
  rec.layer = layer;
  rec.loss = loss;
  rec.ortho_error_b = ortho_error(adapter.b());
  rec.eff_rank_b = effective_rank(adapter.b());
  rec.eff_rank_a = effective_rank(adapter.a());
  rec.eff_rank_dw = effective_rank(delta_weight(adapter));
  if (adapter.rank() >= 2) {
    const CosineStats cs = cosine_stats(adapter.b());
    rec.cos_mean = cs.mean;
    rec.cos_std = cs.std;
  }
  return rec;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.step << ',' << r.layer << ',' << format_double(r.loss) << ','
        << format_double(r.ortho_error_b) << ',' << format_double(r.eff_rank_b) << ','
        << format_double(r.eff_rank_a) << ',' << format_double(r.eff_rank_dw) << ','
        << format_double(r.cos_mean) << ',' << format_double(r.cos_std) << '\n';
  }
}

void save_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_metrics_csv(out, records);
  if (!out) throw Error("failed writing " + path);
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) {
    throw FormatError("metrics csv: unexpected header '" + line + "'");
  }
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw FormatError("metrics csv: expected 9 fields in '" + line + "'");
    try {
      MetricsRecord r;
      r.step = std::stoll(fields[0]);
      r.layer = std::stoul(fields[1]);
      r.loss = std::stod(fields[2]);
      r.ortho_error_b = std::stod(fields[3]);
      r.eff_rank_b = std::stod(fields[4]);
      r.eff_rank_a = std::stod(fields[5]);
      r.eff_rank_dw = std::stod(fields[6]);
      r.cos_mean = std::stod(fields[7]);
      r.cos_std = std::stod(fields[8]);
      records.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("metrics csv: bad number in '" + line + "'");
    }
  }
  return records;
}

std::vector<MetricsRecord> load_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_metrics_csv(in);
}

}  // namespace stiefel_lora
