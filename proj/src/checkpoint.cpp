#include "hscal/checkpoint.hpp"

#include <fstream>

namespace hscal {

using nlohmann::json;

json to_json(const Matrix& m) { return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}}; }

Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

json model_to_json(const Model& m) {
  json layers = json::array();
  for (const auto& l : m.encoder.layers) {
    layers.push_back({{"weight", to_json(l.weight)}, {"bias", l.bias}, {"activation", to_string(l.activation)}});
  }
  json head;
  if (const auto* hs = std::get_if<HypersphericalHead>(&m.head)) {
    head = {{"type", "hyperspherical"},
            {"scale_mode", hs->scale_mode == ScaleMode::frobenius ? "frobenius" : "fixed"},
            {"fixed_scale", hs->fixed_scale},
            {"frame", to_json(hs->frame.x())}};
  } else {
    const auto& lin = std::get<LinearHead>(m.head);
    head = {{"type", "linear"}, {"weight", to_json(lin.weight)}, {"bias", lin.bias}};
  }
  return {
      {"format", kCheckpointFormat},
      {"labels", m.labels},
      {"featurizer",
       {{"ngram_min", m.featurizer.ngram_min},
        {"ngram_max", m.featurizer.ngram_max},
        {"num_buckets", m.featurizer.num_buckets},
        {"lowercase", m.featurizer.lowercase}}},
      {"encoder", {{"embed", to_json(m.encoder.embed)}, {"layers", std::move(layers)}}},
      {"head", std::move(head)},
  };
}

Model model_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != kCheckpointFormat) {
      throw ParseError("unsupported checkpoint format (expected " + std::string(kCheckpointFormat) + ")", 0);
    }
    Model m;
    m.labels = j.at("labels").get<std::vector<std::string>>();
    const auto& f = j.at("featurizer");
    m.featurizer = {f.at("ngram_min").get<std::size_t>(), f.at("ngram_max").get<std::size_t>(),
                    f.at("num_buckets").get<std::size_t>(), f.at("lowercase").get<bool>()};
    const auto& enc = j.at("encoder");
    m.encoder.embed = matrix_from_json(enc.at("embed"));
    for (const auto& l : enc.at("layers")) {
      m.encoder.layers.push_back({matrix_from_json(l.at("weight")), l.at("bias").get<std::vector<double>>(),
                                  activation_from_string(l.at("activation").get<std::string>())});
    }
    const auto& h = j.at("head");
    const auto type = h.at("type").get<std::string>();
    if (type == "hyperspherical") {
      HypersphericalHead hs;
      hs.frame = FrameMatrix(matrix_from_json(h.at("frame")));
      const auto mode = h.at("scale_mode").get<std::string>();
      if (mode != "frobenius" && mode != "fixed") throw ParseError("unknown scale_mode '" + mode + "'", 0);
      hs.scale_mode = mode == "frobenius" ? ScaleMode::frobenius : ScaleMode::fixed;
      hs.fixed_scale = h.at("fixed_scale").get<double>();
      m.head = std::move(hs);
    } else if (type == "linear") {
      m.head = LinearHead{matrix_from_json(h.at("weight")), h.at("bias").get<std::vector<double>>()};
    } else {
      throw ParseError("unknown head type '" + type + "'", 0);
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), 0);
  }
}

void save_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << model_to_json(m).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
  }
  return model_from_json(j);
}

}  // namespace hscal
