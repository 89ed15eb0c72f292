#include "stiefel_lora/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const std::string& dir, const LoraAdapter& adapter,
                     const CheckpointInfo& info) {
  fs::create_directories(dir);
  const fs::path root(dir);
  save_matrix((root / "w0.txt").string(), adapter.w0());
  save_matrix((root / "a.txt").string(), adapter.a());
  save_matrix((root / "b.txt").string(), adapter.b());

  json meta = {
      {"rank", adapter.rank()},
      {"alpha", adapter.alpha()},
      {"mode", std::string(to_string(adapter.mode()))},
      {"variant", std::string(to_string(adapter.variant()))},
      {"train_a", adapter.train_a()},
      {"rslora", adapter.rslora()},
      {"scaling", adapter.scaling()},
      {"step", info.step},
      {"loss", info.loss},
      {"layer", info.layer},
  };
  if (adapter.variant() == Variant::dora) meta["dora_magnitude"] = adapter.dora_magnitude();

  std::ofstream out(root / "meta.json", std::ios::binary);
  if (!out) throw Error("cannot write " + (root / "meta.json").string());
  out << meta.dump(2) << '\n';
}

bool is_adapter_checkpoint(const std::string& dir) {
  return fs::is_regular_file(fs::path(dir) / "meta.json");
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw FormatError("checkpoint directory not found: " + dir);

  std::ifstream in(root / "meta.json", std::ios::binary);
  if (!in) throw FormatError("checkpoint " + dir + ": missing meta.json");
  json meta;
  try {
    meta = json::parse(in);
    AdapterOptions options;
    options.rank = meta.at("rank").get<std::size_t>();
    options.alpha = meta.at("alpha").get<double>();
    options.mode = parse_b_mode(meta.at("mode").get<std::string>());
    options.variant = parse_variant(meta.at("variant").get<std::string>());
    options.train_a = meta.at("train_a").get<bool>();
    options.rslora = meta.value("rslora", false);

    CheckpointInfo info;
    info.step = meta.value("step", std::int64_t{0});
    info.loss = meta.value("loss", 0.0);
    info.layer = meta.value("layer", std::size_t{0});

    std::vector<double> magnitude;
    if (options.variant == Variant::dora) {
      magnitude = meta.at("dora_magnitude").get<std::vector<double>>();
    }

    Matrix w0 = load_matrix((root / "w0.txt").string());
    Matrix a = load_matrix((root / "a.txt").string());
    Matrix b = load_matrix((root / "b.txt").string());
    std::variant<Matrix, StiefelPoint> bv = b;
    if (options.mode == BMode::stiefel) bv = StiefelPoint(std::move(b));

    return {LoraAdapter(std::move(w0), std::move(a), std::move(bv), options, std::move(magnitude)),
            info};
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + dir + ": bad meta.json: " + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError("checkpoint " + dir + ": " + e.what());
  }
}

}  // namespace stiefel_lora
