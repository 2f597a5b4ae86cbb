#include <fstream>
#include <initializer_list>
#include <string_view>

#include "hscal/trainer.hpp"

namespace hscal {

using nlohmann::json;

namespace {

void require_known_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto key : keys) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

std::string to_string(HeadType h) { return h == HeadType::hyperspherical ? "hyperspherical" : "linear"; }

HeadType head_type_from_string(const std::string& s) {
  if (s == "hyperspherical" || s == "hs") return HeadType::hyperspherical;
  if (s == "linear") return HeadType::linear;
  throw ConfigError("unknown head type '" + s + "'");
}

std::string to_string(OptimizerType o) { return o == OptimizerType::adam ? "adam" : "sgd"; }

OptimizerType optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerType::sgd;
  if (s == "adam") return OptimizerType::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

json to_json(const TrainConfig& c) {
  json data = {{"train", c.data.train_path},
               {"dev", c.data.dev_path},
               {"test", c.data.test_path},
               {"split", {{"train", c.data.split.train}, {"dev", c.data.split.dev}, {"test", c.data.split.test}}},
               {"label_noise", c.data.label_noise}};
  if (c.data.synth) {
    const auto& s = *c.data.synth;
    data["synth"] = {{"k", s.k},         {"n", s.n},
                     {"noise", s.noise}, {"decay", s.decay},
                     {"pool_size", s.pool_size}, {"min_words", s.min_words},
                     {"max_words", s.max_words}, {"seed", s.seed}};
  }
  return {
      {"format", kConfigFormat},
      {"seed", c.seed},
      {"data", std::move(data)},
      {"featurizer",
       {{"ngram_min", c.featurizer.ngram_min},
        {"ngram_max", c.featurizer.ngram_max},
        {"num_buckets", c.featurizer.num_buckets},
        {"lowercase", c.featurizer.lowercase}}},
      {"encoder",
       {{"d_embed", c.encoder.d_embed},
        {"hidden", c.encoder.hidden},
        {"output_dim", c.encoder.output_dim},
        {"hidden_activation", to_string(c.encoder.hidden_activation)},
        {"output_activation", to_string(c.encoder.output_activation)}}},
      {"head",
       {{"type", to_string(c.head)},
        {"scale_mode", c.scale_mode == ScaleMode::frobenius ? "frobenius" : "fixed"},
        {"fixed_scale", c.fixed_scale},
        {"frame_path", c.frame_path},
        {"frame",
         {{"max_iters", c.frame.max_iters},
          {"step_size", c.frame.step_size},
          {"final_step_ratio", c.frame.final_step_ratio},
          {"tolerance", c.frame.tolerance},
          {"restarts", c.frame.restarts}}}}},
      {"loss",
       {{"base", to_string(c.loss.base)},
        {"smoothing", c.loss.smoothing},
        {"rau_weight", c.loss.rau_weight},
        {"avuc_weight", c.loss.avuc_weight},
        {"kl_weight", c.loss.kl_weight},
        {"kl_refreshes_per_epoch", c.kl_refreshes_per_epoch}}},
      {"train",
       {{"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"optimizer", to_string(c.optimizer)},
        {"learning_rate", c.learning_rate},
        {"weight_decay", c.weight_decay},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_eps", c.adam_eps},
        {"u_theta_warm_epochs", c.u_theta_warm_epochs},
        {"u_theta_continuous", c.u_theta_continuous},
        {"eval_every", c.eval_every},
        {"bins", c.bins},
        {"temperature_scaling", c.temperature_scaling},
        {"log_steps", c.log_steps}}},
  };
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    require_known_keys(j, "config", {"format", "seed", "data", "featurizer", "encoder", "head", "loss", "train"});
    if (auto it = j.find("format"); it != j.end() && it->get<std::string>() != kConfigFormat) {
      throw ConfigError("unsupported config format '" + it->get<std::string>() + "'");
    }
    read(j, "seed", c.seed);
    if (auto it = j.find("data"); it != j.end()) {
      const auto& d = *it;
      require_known_keys(d, "data", {"train", "dev", "test", "synth", "split", "label_noise"});
      read(d, "train", c.data.train_path);
      read(d, "dev", c.data.dev_path);
      read(d, "test", c.data.test_path);
      read(d, "label_noise", c.data.label_noise);
      if (auto s = d.find("split"); s != d.end()) {
        require_known_keys(*s, "data.split", {"train", "dev", "test"});
        read(*s, "train", c.data.split.train);
        read(*s, "dev", c.data.split.dev);
        read(*s, "test", c.data.split.test);
      }
      if (auto s = d.find("synth"); s != d.end() && !s->is_null()) {
        require_known_keys(*s, "data.synth",
                           {"k", "n", "noise", "decay", "pool_size", "min_words", "max_words", "seed"});
        SynthSpec spec;
        spec.seed = c.seed;
        read(*s, "k", spec.k);
        read(*s, "n", spec.n);
        read(*s, "noise", spec.noise);
        read(*s, "decay", spec.decay);
        read(*s, "pool_size", spec.pool_size);
        read(*s, "min_words", spec.min_words);
        read(*s, "max_words", spec.max_words);
        read(*s, "seed", spec.seed);
        c.data.synth = spec;
      }
    }
    if (auto it = j.find("featurizer"); it != j.end()) {
      require_known_keys(*it, "featurizer", {"ngram_min", "ngram_max", "num_buckets", "lowercase"});
      read(*it, "ngram_min", c.featurizer.ngram_min);
      read(*it, "ngram_max", c.featurizer.ngram_max);
      read(*it, "num_buckets", c.featurizer.num_buckets);
      read(*it, "lowercase", c.featurizer.lowercase);
    }
    if (auto it = j.find("encoder"); it != j.end()) {
      require_known_keys(*it, "encoder", {"d_embed", "hidden", "output_dim", "hidden_activation", "output_activation"});
      read(*it, "d_embed", c.encoder.d_embed);
      read(*it, "hidden", c.encoder.hidden);
      read(*it, "output_dim", c.encoder.output_dim);
      if (auto a = it->find("hidden_activation"); a != it->end())
        c.encoder.hidden_activation = activation_from_string(a->get<std::string>());
      if (auto a = it->find("output_activation"); a != it->end())
        c.encoder.output_activation = activation_from_string(a->get<std::string>());
    }
    if (auto it = j.find("head"); it != j.end()) {
      require_known_keys(*it, "head", {"type", "scale_mode", "fixed_scale", "frame_path", "frame"});
      if (auto t = it->find("type"); t != it->end()) c.head = head_type_from_string(t->get<std::string>());
      if (auto s = it->find("scale_mode"); s != it->end()) {
        const auto mode = s->get<std::string>();
        if (mode != "frobenius" && mode != "fixed") throw ConfigError("unknown scale_mode '" + mode + "'");
        c.scale_mode = mode == "frobenius" ? ScaleMode::frobenius : ScaleMode::fixed;
      }
      read(*it, "fixed_scale", c.fixed_scale);
      read(*it, "frame_path", c.frame_path);
      if (auto f = it->find("frame"); f != it->end()) {
        require_known_keys(*f, "head.frame", {"max_iters", "step_size", "final_step_ratio", "tolerance", "restarts"});
        read(*f, "max_iters", c.frame.max_iters);
        read(*f, "step_size", c.frame.step_size);
        read(*f, "final_step_ratio", c.frame.final_step_ratio);
        read(*f, "tolerance", c.frame.tolerance);
        read(*f, "restarts", c.frame.restarts);
      }
    }
    if (auto it = j.find("loss"); it != j.end()) {
      require_known_keys(*it, "loss",
                         {"base", "smoothing", "rau_weight", "avuc_weight", "kl_weight", "kl_refreshes_per_epoch"});
      if (auto b = it->find("base"); b != it->end()) c.loss.base = base_loss_from_string(b->get<std::string>());
      read(*it, "smoothing", c.loss.smoothing);
      read(*it, "rau_weight", c.loss.rau_weight);
      read(*it, "avuc_weight", c.loss.avuc_weight);
      read(*it, "kl_weight", c.loss.kl_weight);
      read(*it, "kl_refreshes_per_epoch", c.kl_refreshes_per_epoch);
    }
    if (auto it = j.find("train"); it != j.end()) {
      require_known_keys(*it, "train",
                         {"epochs", "batch_size", "optimizer", "learning_rate", "weight_decay", "adam_beta1",
                          "adam_beta2", "adam_eps", "u_theta_warm_epochs",
                          "u_theta_continuous", "eval_every", "bins", "temperature_scaling", "log_steps"});
      read(*it, "epochs", c.epochs);
      read(*it, "batch_size", c.batch_size);
      if (auto o = it->find("optimizer"); o != it->end()) c.optimizer = optimizer_from_string(o->get<std::string>());
      read(*it, "learning_rate", c.learning_rate);
      read(*it, "weight_decay", c.weight_decay);
      read(*it, "adam_beta1", c.adam_beta1);
      read(*it, "adam_beta2", c.adam_beta2);
      read(*it, "adam_eps", c.adam_eps);
      read(*it, "u_theta_warm_epochs", c.u_theta_warm_epochs);
      read(*it, "u_theta_continuous", c.u_theta_continuous);
      read(*it, "eval_every", c.eval_every);
      read(*it, "bins", c.bins);
      read(*it, "temperature_scaling", c.temperature_scaling);
      read(*it, "log_steps", c.log_steps);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return train_config_from_json(j);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (bins < 1) throw ConfigError("bins must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (kl_refreshes_per_epoch < 1) throw ConfigError("kl_refreshes_per_epoch must be >= 1");
  if (!(data.label_noise >= 0.0 && data.label_noise <= 1.0)) throw ConfigError("label_noise must lie in [0, 1]");
  if (data.train_path.empty() && !data.synth) throw ConfigError("config names neither a train file nor a synth spec");
  if (head == HeadType::hyperspherical && scale_mode == ScaleMode::fixed && !(fixed_scale > 0.0)) {
    throw ConfigError("fixed_scale must be > 0");
  }
  if ((loss.rau_weight > 0.0 || loss.avuc_weight > 0.0) && u_theta_warm_epochs < 1) {
    throw ConfigError("RAU/AVUC need at least one u_theta warm-up epoch");
  }
  featurizer.validate();
  loss.validate();
  frame.validate();
  if (data.synth) data.synth->validate();
}

}  // namespace hscal
