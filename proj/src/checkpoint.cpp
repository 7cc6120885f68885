#include "sael/checkpoint.hpp"

#include <set>

#include "sael/corpus.hpp"
#include "sael/errors.hpp"

namespace sael {

using nlohmann::json;

json config_to_json(const MoeConfig& c) {
  json j = json::object();
  j["d"] = c.d;
  j["n_heads"] = c.n_heads;
  j["d_gate"] = c.d_gate;
  j["k"] = c.k;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["eta"] = c.eta;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["use_mhsa"] = c.use_mhsa;
  j["use_gate"] = c.use_gate;
  j["active"] = json::array({c.active[0], c.active[1], c.active[2]});
  return j;
}

MoeConfig config_from_json(const json& j) {
  static const std::set<std::string> known{"d",      "n_heads",    "d_gate", "k",
                                           "alpha",  "gamma",      "eta",    "epochs",
                                           "batch_size", "seed",   "use_mhsa", "use_gate",
                                           "active"};
  if (!j.is_object()) throw DataError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw DataError("unknown model config key '" + key + "'");
  }
  MoeConfig c;
  try {
    if (j.contains("d")) c.d = j["d"].get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<std::size_t>();
    if (j.contains("d_gate")) c.d_gate = j["d_gate"].get<std::size_t>();
    if (j.contains("k")) c.k = j["k"].get<std::size_t>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
    if (j.contains("eta")) c.eta = j["eta"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("use_mhsa")) c.use_mhsa = j["use_mhsa"].get<bool>();
    if (j.contains("use_gate")) c.use_gate = j["use_gate"].get<bool>();
    if (j.contains("active")) {
      const auto& a = j["active"];
      if (!a.is_array() || a.size() != kNumExperts) throw DataError("\"active\" must list 3 booleans");
      for (std::size_t i = 0; i < kNumExperts; ++i) c.active[i] = a[i].get<bool>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

json checkpoint_to_json(const MoeModel& model, const json& metadata) {
  json j = json::object();
  j["format"] = "sael-moe";
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(model.config);
  j["prev_gate"] = json::array({model.prev_gate[0], model.prev_gate[1], model.prev_gate[2]});
  json params = json::object();
  for (const auto& [name, p] : model.named_parameters()) {
    params[name] = json{{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", p->value.data()}};
  }
  j["params"] = std::move(params);
  j["metadata"] = metadata;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "sael-moe") throw DataError("not a sael-moe checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck{MoeModel(config_from_json(j.at("config"))), j.value("metadata", json::object())};
    const auto& gate = j.at("prev_gate");
    if (!gate.is_array() || gate.size() != kNumExperts) throw DataError("prev_gate must hold 3 values");
    for (std::size_t i = 0; i < kNumExperts; ++i) ck.model.prev_gate[i] = gate[i].get<double>();

    const auto& params = j.at("params");
    auto named = ck.model.named_parameters();
    if (params.size() != named.size()) {
      throw DataError("checkpoint has " + std::to_string(params.size()) + " tensors, model expects " +
                      std::to_string(named.size()));
    }
    for (auto& [name, p] : named) {
      if (!params.contains(name)) throw DataError("checkpoint lacks tensor '" + name + "'");
      const auto& t = params[name];
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      if (rows != p->value.rows() || cols != p->value.cols()) {
        throw DataError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + std::to_string(p->value.rows()) + "x" +
                        std::to_string(p->value.cols()));
      }
      auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != rows * cols) throw DataError("tensor '" + name + "' data length mismatch");
      p->value.data() = std::move(data);
    }
    return ck;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const NumericError& e) {
    throw DataError(std::string("invalid checkpoint config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const MoeModel& model, const json& metadata) {
  write_text_file(path, checkpoint_to_json(model, metadata).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace sael
