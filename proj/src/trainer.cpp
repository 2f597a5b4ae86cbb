#include "hscal/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <utility>

namespace hscal {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kFrameStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kNoiseStream = 5;

constexpr std::size_t kPredictChunk = 512;

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v.at(i));
  return out;
}

nlohmann::json terms_json(const LossTerms& t) {
  return {{"base", t.base}, {"rau", t.rau}, {"avuc", t.avuc}, {"kl", t.kl}};
}

}  // namespace

double update_u_theta(const std::vector<std::vector<double>>& history, std::size_t warm_epochs) {
  double sum = 0.0;
  std::size_t count = 0;
  const std::size_t upto = std::min(history.size(), warm_epochs);
  for (std::size_t e = 0; e < upto; ++e) {
    for (double u : history[e]) sum += u;
    count += history[e].size();
  }
  if (count == 0) return 0.0;
  return std::clamp(sum / static_cast<double>(count), 0.0, 1.0);
}

PreparedData prepare_data(const DataConfig& cfg, std::uint64_t seed) {
  PreparedData out;
  if (cfg.synth) {
    const Dataset all = synth_gaussian_text(*cfg.synth);
    SplitSpec spec = cfg.split;
    spec.seed = Rng::derive(seed, kSplitStream);
    auto parts = split(all, spec);
    out = {std::move(parts.train), std::move(parts.dev), std::move(parts.test)};
  } else {
    Dataset train = load_jsonl(cfg.train_path);
    train.validate();
    const bool have_dev = !cfg.dev_path.empty();
    const bool have_test = !cfg.test_path.empty();
    if (have_dev && have_test) {
      out.train = std::move(train);
    } else {
      // Carve the missing parts out of the training file.
      SplitSpec spec = cfg.split;
      if (have_dev) {
        spec = {spec.train + spec.dev, 0.0, spec.test, 0};
      } else if (have_test) {
        spec = {spec.train + spec.test, spec.dev, 0.0, 0};
      }
      spec.seed = Rng::derive(seed, kSplitStream);
      auto parts = split(train, spec);
      out.train = std::move(parts.train);
      out.dev = std::move(parts.dev);
      out.test = std::move(parts.test);
    }
    // Extra labels seen only in dev/test files join the vocabulary at the end.
    auto merge = [&out](const std::string& path) {
      Dataset d = load_jsonl(path);
      for (const auto& name : d.vocab)
        if (std::find(out.train.vocab.begin(), out.train.vocab.end(), name) == out.train.vocab.end())
          out.train.vocab.push_back(name);
      return remap_labels(d, out.train.vocab);
    };
    if (have_dev) out.dev = merge(cfg.dev_path);
    if (have_test) out.test = merge(cfg.test_path);
    out.dev.vocab = out.train.vocab;
    out.test.vocab = out.train.vocab;
  }
  if (cfg.label_noise > 0.0) out.train = inject_noise(out.train, cfg.label_noise, Rng::derive(seed, kNoiseStream));
  return out;
}

nlohmann::json to_json(const RunRecord& r, bool include_timing) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json dev = nullptr;
    if (e.dev_f1) {
      dev = {{"f1", *e.dev_f1}, {"ece_classwise", *e.dev_ece_classwise}, {"ece_standard", *e.dev_ece_standard}};
    }
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"terms", terms_json(e.terms)},
                      {"u_theta", e.u_theta},
                      {"aux_active", e.aux_active},
                      {"dev", std::move(dev)}});
  }
  nlohmann::json j = {
      {"format", kRunRecordFormat},
      {"labels", r.labels},
      {"epochs", std::move(epochs)},
      {"test", r.test ? to_json(*r.test, r.labels) : nlohmann::json(nullptr)},
      {"test_temperature_scaled", r.test_scaled ? to_json(*r.test_scaled, r.labels) : nlohmann::json(nullptr)},
  };
  if (!r.steps.empty()) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.steps) steps.push_back({{"epoch", s.epoch}, {"indices", s.indices}, {"loss", s.loss}});
    j["steps"] = std::move(steps);
  }
  if (include_timing) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

Model init_model(const TrainConfig& cfg, const std::vector<std::string>& labels) {
  const std::size_t k = labels.size();
  if (k < 2) throw DataError("training needs at least two labels");
  Rng rng(Rng::derive(cfg.seed, kInitStream));
  Model m;
  m.featurizer = cfg.featurizer;
  m.labels = labels;
  m.encoder = init_encoder(cfg.featurizer.num_buckets, cfg.encoder, rng);
  const std::size_t h = m.encoder.output_dim();
  if (cfg.head == HeadType::hyperspherical) {
    HypersphericalHead head;
    if (!cfg.frame_path.empty()) {
      head.frame = read_frame_csv(cfg.frame_path);
      if (head.frame.k() != k || head.frame.h() != h) {
        throw ConfigError("frame " + cfg.frame_path + " is " + std::to_string(head.frame.k()) + "x" +
                          std::to_string(head.frame.h()) + ", model needs " + std::to_string(k) + "x" +
                          std::to_string(h));
      }
    } else {
      FrameOptConfig fc = cfg.frame;
      fc.seed = Rng::derive(cfg.seed, kFrameStream);
      head.frame = optimize_frame(k, h, fc);
    }
    head.scale_mode = cfg.scale_mode;
    head.fixed_scale = cfg.fixed_scale;
    m.head = std::move(head);
  } else {
    m.head = init_linear_head(h, k, rng);
  }
  m.validate();
  return m;
}

Trainer::Trainer(TrainConfig cfg, PreparedData data)
    : cfg_(std::move(cfg)), data_(std::move(data)), shuffle_rng_(Rng::derive(cfg_.seed, kShuffleStream)) {
  cfg_.validate();
  if (data_.train.size() == 0) throw DataError("training set is empty");
  data_.train.validate();
  model_ = init_model(cfg_, data_.train.vocab);
  train_x_ = featurize_all(data_.train.texts(), model_.featurizer);
  train_y_ = data_.train.labels();
  dev_x_ = featurize_all(data_.dev.texts(), model_.featurizer);
  dev_y_ = data_.dev.labels();
  grads_.reset(model_);
  record_.labels = model_.labels;
  if (cfg_.log_steps) step_log_ = &record_.steps;
}

bool Trainer::aux_active() const { return epoch_ >= cfg_.u_theta_warm_epochs; }

LossPlan Trainer::active_plan() const {
  LossPlan plan = cfg_.loss;
  if (!aux_active()) {
    plan.rau_weight = 0.0;
    plan.avuc_weight = 0.0;
  }
  if (!empirical_) plan.kl_weight = 0.0;
  return plan;
}

TotalLoss Trainer::batch_loss(const Model& model, std::span<const std::size_t> indices) const {
  const auto x = gather(train_x_, indices);
  const auto y = gather(train_y_, indices);
  const Matrix logits = forward(model, x);
  const LossPlan plan = active_plan();
  Matrix empirical;
  if (plan.kl_weight > 0.0) empirical = empirical_targets(*empirical_, softmax_rows(logits));
  return total_loss(logits, y, plan, u_theta_, plan.kl_weight > 0.0 ? &empirical : nullptr);
}

TotalLoss Trainer::step(std::span<const std::size_t> indices) {
  const auto x = gather(train_x_, indices);
  const auto y = gather(train_y_, indices);
  ForwardCache cache;
  const Matrix logits = forward(model_, x, &cache);
  const LossPlan plan = active_plan();
  const Matrix probs = softmax_rows(logits);
  Matrix empirical;
  if (plan.kl_weight > 0.0) empirical = empirical_targets(*empirical_, probs);
  TotalLoss loss = total_loss(logits, y, plan, u_theta_, plan.kl_weight > 0.0 ? &empirical : nullptr);

  if (epoch_ < cfg_.u_theta_warm_epochs || cfg_.u_theta_continuous) {
    for (std::size_t i = 0; i < probs.rows(); ++i) epoch_u_.push_back(uncertainty(probs.row(i)));
  }

  grads_.reset(model_);
  backward(model_, x, cache, loss.grad_logits, grads_);

  apply_update();
  if (step_log_) step_log_->push_back({epoch_ + 1, {indices.begin(), indices.end()}, loss.value});
  return loss;
}

void Trainer::apply_update() {
  auto& enc = model_.encoder;
  auto* lin = std::get_if<LinearHead>(&model_.head);
  std::vector<std::pair<std::span<double>, std::span<const double>>> dense;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    dense.emplace_back(enc.layers[l].weight.data(), grads_.encoder.weight[l].data());
    dense.emplace_back(enc.layers[l].bias, grads_.encoder.bias[l]);
  }
  if (lin) {
    dense.emplace_back(lin->weight.data(), grads_.head_weight.data());
    dense.emplace_back(lin->bias, grads_.head_bias);
  }

  const double lr = cfg_.learning_rate;
  if (cfg_.weight_decay > 0.0) {
    const double shrink = 1.0 - lr * cfg_.weight_decay;
    for (double& v : enc.embed.data()) v *= shrink;
    for (auto& [p, g] : dense)
      for (double& v : p) v *= shrink;
  }

  if (cfg_.optimizer == OptimizerType::sgd) {
    auto sgd = [lr](std::span<double> p, std::span<const double> g) {
      for (std::size_t t = 0; t < p.size(); ++t) p[t] -= lr * g[t];
    };
    // Untouched embedding rows have zero gradient.
    for (auto r : grads_.encoder.touched_rows) sgd(enc.embed.row(r), grads_.encoder.embed.row(r));
    for (auto& [p, g] : dense) sgd(p, g);
    return;
  }

  dense.emplace_back(enc.embed.data(), grads_.encoder.embed.data());
  if (adam_m_.empty()) {
    for (auto& [p, g] : dense) {
      adam_m_.emplace_back(p.size(), 0.0);
      adam_v_.emplace_back(p.size(), 0.0);
    }
  }
  ++adam_t_;
  const double b1 = cfg_.adam_beta1;
  const double b2 = cfg_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
  for (std::size_t s = 0; s < dense.size(); ++s) {
    auto [p, g] = dense[s];
    auto& m = adam_m_[s];
    auto& v = adam_v_[s];
    for (std::size_t t = 0; t < p.size(); ++t) {
      m[t] = b1 * m[t] + (1.0 - b1) * g[t];
      v[t] = b2 * v[t] + (1.0 - b2) * g[t] * g[t];
      p[t] -= lr * (m[t] / c1) / (std::sqrt(v[t] / c2) + cfg_.adam_eps);
    }
  }
}

void Trainer::refresh_empirical() {
  const ProbBatch batch = ProbBatch::from_logits(
      [&] {
        Matrix all(train_x_.size(), model_.num_labels());
        for (std::size_t s = 0; s < train_x_.size(); s += kPredictChunk) {
          const std::size_t e = std::min(train_x_.size(), s + kPredictChunk);
          const Matrix part = forward(model_, std::span(train_x_).subspan(s, e - s));
          std::copy(part.data().begin(), part.data().end(), all.data().begin() + s * all.cols());
        }
        return all;
      }(),
      train_y_);
  empirical_ = build_empirical_table(batch, cfg_.bins);
}

EpochRecord Trainer::run_epoch() {
  const std::size_t n = train_x_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle_rng_.shuffle(order);

  const std::size_t steps = (n + cfg_.batch_size - 1) / cfg_.batch_size;
  const std::size_t refreshes = cfg_.loss.kl_weight > 0.0 ? std::min(cfg_.kl_refreshes_per_epoch, steps) : 0;

  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.aux_active = aux_active() && (cfg_.loss.rau_weight > 0.0 || cfg_.loss.avuc_weight > 0.0);
  rec.u_theta = u_theta_;
  double weight_sum = 0.0;
  std::size_t next_refresh = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    if (next_refresh < refreshes && s == next_refresh * steps / refreshes) {
      refresh_empirical();
      ++next_refresh;
    }
    const std::size_t begin = s * cfg_.batch_size;
    const std::size_t end = std::min(n, begin + cfg_.batch_size);
    const auto loss = step(std::span(order).subspan(begin, end - begin));
    const double w = static_cast<double>(end - begin);
    rec.loss += w * loss.value;
    rec.terms.base += w * loss.terms.base;
    rec.terms.rau += w * loss.terms.rau;
    rec.terms.avuc += w * loss.terms.avuc;
    rec.terms.kl += w * loss.terms.kl;
    weight_sum += w;
  }
  rec.loss /= weight_sum;
  rec.terms.base /= weight_sum;
  rec.terms.rau /= weight_sum;
  rec.terms.avuc /= weight_sum;
  rec.terms.kl /= weight_sum;

  if (epoch_ < cfg_.u_theta_warm_epochs || cfg_.u_theta_continuous) {
    u_history_.push_back(std::move(epoch_u_));
    epoch_u_.clear();
    u_theta_ = update_u_theta(u_history_, cfg_.u_theta_continuous ? u_history_.size() : cfg_.u_theta_warm_epochs);
  }
  ++epoch_;

  if (!dev_x_.empty() && (epoch_ % cfg_.eval_every == 0 || epoch_ == cfg_.epochs)) {
    const auto r = evaluate(model_, data_.dev, cfg_.bins);
    rec.dev_f1 = r.metrics.f1;
    rec.dev_ece_classwise = r.ece_classwise;
    rec.dev_ece_standard = r.ece_standard;
  }
  record_.epochs.push_back(rec);
  return rec;
}

RunRecord Trainer::run() {
  const auto start = std::chrono::steady_clock::now();
  while (epoch_ < cfg_.epochs) run_epoch();
  if (data_.test.size() > 0) {
    record_.test = evaluate(model_, data_.test, cfg_.bins);
    if (cfg_.temperature_scaling && data_.dev.size() > 0) {
      const auto fit = fit_temperature(predict_logits(model_, data_.dev), data_.dev.labels());
      record_.test_scaled = evaluate(model_, data_.test, cfg_.bins, fit);
    }
  }
  record_.wall_clock_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record_;
}

Matrix predict_logits(const Model& model, const Dataset& ds) {
  const Dataset mapped = model.labels.empty() ? ds : remap_labels(ds, model.labels);
  const auto x = featurize_all(mapped.texts(), model.featurizer);
  Matrix all(x.size(), model.num_labels());
  for (std::size_t s = 0; s < x.size(); s += kPredictChunk) {
    const std::size_t e = std::min(x.size(), s + kPredictChunk);
    const Matrix part = forward(model, std::span(x).subspan(s, e - s));
    std::copy(part.data().begin(), part.data().end(), all.data().begin() + s * all.cols());
  }
  return all;
}

ProbBatch predict(const Model& model, const Dataset& ds, std::optional<double> temperature) {
  const Dataset mapped = model.labels.empty() ? ds : remap_labels(ds, model.labels);
  Matrix logits = predict_logits(model, mapped);
  if (temperature) logits = apply_temperature(logits, *temperature);
  return ProbBatch::from_logits(logits, mapped.labels());
}

CalibrationReport evaluate(const Model& model, const Dataset& ds, std::size_t m_bins,
                           const std::optional<TemperatureFit>& temperature, BinGrouping grouping) {
  if (ds.size() == 0) throw DataError("evaluate: dataset is empty");
  const ProbBatch batch = predict(model, ds, temperature ? std::optional(temperature->t) : std::nullopt);
  CalibrationReport r = calibration_report(batch, m_bins, grouping);
  r.temperature = temperature;
  return r;
}

}  // namespace hscal
