#include "stket/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "stket/errors.hpp"
#include "stket/json_keys.hpp"

namespace stket {

using nlohmann::json;

double global_grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (double g : p.grad.data()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& [name, p] : params) {
    for (double& g : p.grad.data()) g *= factor;
  }
  return factor;
}

void adamw_step(ParamStore& params, OptimizerState& state) {
  const AdamWConfig& h = state.hyper;
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    if (m.shape() != p.value.shape()) m = Tensor(p.value.shape());
    if (v.shape() != p.value.shape()) v = Tensor(p.value.shape());
    const bool has_grad = p.grad.shape() == p.value.shape();
    const auto w = p.value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has_grad ? p.grad[i] : 0.0;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= h.lr * (mhat / (std::sqrt(vhat) + h.eps) + h.weight_decay * w[i]);
    }
  }
}

void TrainConfig::validate() const {
  if (!(optimizer.lr >= 0.0)) throw ConfigError("train config: lr must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
        optimizer.beta2 < 1.0)) {
    throw ConfigError("train config: betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("train config: eps must be positive");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be non-negative");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"seed", c.seed},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"clip_norm", c.clip_norm},
          {"shuffle", c.shuffle}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown_keys(j, to_json(TrainConfig{}), "train config");
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.optimizer.lr = j.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = j.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.shuffle = j.value("shuffle", c.shuffle);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const LossValues& v) {
  return {{"spatial", v.spatial},
          {"temporal", v.temporal},
          {"final", v.final_term},
          {"spatial_knowledge", v.spatial_knowledge},
          {"temporal_knowledge", v.temporal_knowledge},
          {"object", v.object},
          {"total", v.total}};
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

LossValues loss_values(const LossTerms& t) {
  return {t.spatial.value()[0],           t.temporal.value()[0],
          t.final_term.value()[0],        t.spatial_knowledge.value()[0],
          t.temporal_knowledge.value()[0], t.object.value()[0],
          t.total.value()[0]};
}

void check_finite(const LossValues& v, const std::string& video, std::size_t epoch) {
  const std::pair<const char*, double> terms[] = {
      {"spatial", v.spatial},
      {"temporal", v.temporal},
      {"final", v.final_term},
      {"spatial_knowledge", v.spatial_knowledge},
      {"temporal_knowledge", v.temporal_knowledge},
      {"object", v.object},
  };
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", video " + video +
                         ", term " + name);
    }
  }
  if (!std::isfinite(v.total)) {
    throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", video " + video +
                       ", term total");
  }
}

void accumulate(LossValues& a, const LossValues& b) {
  a.spatial += b.spatial;
  a.temporal += b.temporal;
  a.final_term += b.final_term;
  a.spatial_knowledge += b.spatial_knowledge;
  a.temporal_knowledge += b.temporal_knowledge;
  a.object += b.object;
  a.total += b.total;
}

LossValues divided(LossValues a, double n) {
  a.spatial /= n;
  a.temporal /= n;
  a.final_term /= n;
  a.spatial_knowledge /= n;
  a.temporal_knowledge /= n;
  a.object /= n;
  a.total /= n;
  return a;
}

}  // namespace

EpochSummary train_epoch(StketModel& model, OptimizerState& state, const KnowledgeBanks& knowledge,
                         const std::vector<VideoSample>& videos, const TrainConfig& config,
                         std::size_t epoch, const ProgressFn& progress) {
  config.validate();
  state.hyper = config.optimizer;
  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), 0);
  if (config.shuffle) {
    std::mt19937_64 rng(derive_seed(config.seed, epoch, 0xffffffffu));
    std::shuffle(order.begin(), order.end(), rng);
  }
  EpochSummary summary;
  summary.epoch = epoch;
  for (std::size_t idx : order) {
    const VideoSample& video = videos[idx];
    if (video.frames.empty()) continue;
    model.params().zero_grad();
    Tape tape;
    VideoForward out;
    try {
      out = forward(tape, model, knowledge, video, {true, derive_seed(config.seed, epoch, idx)});
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", video " + video.video_id +
                         ", forward pass: " + e.what());
    }
    const LossValues values = loss_values(out.loss);
    check_finite(values, video.video_id, epoch);
    tape.backward(out.loss.total);
    const double factor = clip_gradients(model.params(), config.clip_norm);
    adamw_step(model.params(), state);
    accumulate(summary.mean, values);
    ++summary.videos;
    if (progress) progress({epoch, video.video_id, values, factor});
  }
  if (summary.videos > 0) summary.mean = divided(summary.mean, static_cast<double>(summary.videos));
  return summary;
}

std::vector<EpochSummary> train(StketModel& model, OptimizerState& state,
                                const KnowledgeBanks& knowledge,
                                const std::vector<VideoSample>& videos, const TrainConfig& config,
                                std::size_t start_epoch, const ProgressFn& progress) {
  std::vector<EpochSummary> out;
  for (std::size_t e = start_epoch + 1; e <= config.epochs; ++e) {
    out.push_back(train_epoch(model, state, knowledge, videos, config, e, progress));
  }
  return out;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor load_checked(const std::filesystem::path& path, const Shape& expected) {
  Tensor t;
  try {
    t = load_tensor(path);
  } catch (const Error& e) {
    throw DataError(std::string("corrupt checkpoint tensor: ") + e.what());
  }
  if (t.shape() != expected) {
    throw ConfigError(path.string() + " has shape " + shape_string(t.shape()) + ", expected " +
                      shape_string(expected));
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const StketModel& model,
                     const OptimizerState& state, const TrainConfig& train, std::size_t epoch,
                     Task task) {
  namespace fs = std::filesystem;
  for (const char* sub : {"params", "adam_m", "adam_v"}) fs::create_directories(dir / sub);
  json params = json::array();
  for (const auto& [name, p] : model.params()) {
    const std::string file = name + ".stkt";
    save_tensor(dir / "params" / file, p.value);
    const auto m = state.m.find(name);
    const auto v = state.v.find(name);
    const bool has_moments = m != state.m.end() && v != state.v.end();
    if (has_moments) {
      save_tensor(dir / "adam_m" / file, m->second);
      save_tensor(dir / "adam_v" / file, v->second);
    }
    params.push_back({{"name", name},
                      {"shape", p.value.shape()},
                      {"file", file},
                      {"moments", has_moments}});
  }
  json j = {{"version", kCheckpointVersion},
            {"task", to_string(task)},
            {"epoch", epoch},
            {"model", to_json(model.config())},
            {"train", to_json(train)},
            {"optimizer", {{"step", state.step},
                           {"lr", state.hyper.lr},
                           {"beta1", state.hyper.beta1},
                           {"beta2", state.hyper.beta2},
                           {"eps", state.hyper.eps},
                           {"weight_decay", state.hyper.weight_decay}}},
            {"params", params}};
  write_json(dir / "checkpoint.json", j);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const json j = read_json(dir / "checkpoint.json");
  Checkpoint c;
  try {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    c.task = parse_task(j.at("task").get<std::string>());
    c.epoch = j.at("epoch").get<std::size_t>();
    c.model = model_config_from_json(j.at("model"));
    c.model.validate();
    c.train = train_config_from_json(j.at("train"));
    const json& o = j.at("optimizer");
    c.optimizer.step = o.at("step").get<std::uint64_t>();
    c.optimizer.hyper = {o.at("lr").get<double>(), o.at("beta1").get<double>(),
                         o.at("beta2").get<double>(), o.at("eps").get<double>(),
                         o.at("weight_decay").get<double>()};
    for (const auto& p : j.at("params")) {
      const auto name = p.at("name").get<std::string>();
      const auto shape = p.at("shape").get<Shape>();
      const auto file = p.at("file").get<std::string>();
      c.params.add(name, load_checked(dir / "params" / file, shape));
      if (p.at("moments").get<bool>()) {
        c.optimizer.m[name] = load_checked(dir / "adam_m" / file, shape);
        c.optimizer.v[name] = load_checked(dir / "adam_v" / file, shape);
      }
    }
  } catch (const json::exception& e) {
    throw DataError((dir / "checkpoint.json").string() + ": " + e.what());
  }
  // The stored parameter set must be exactly what this config builds.
  const StketModel reference(c.model, 0);
  for (const auto& [name, p] : reference.params()) {
    if (!c.params.contains(name)) throw ConfigError("checkpoint is missing parameter " + name);
    if (c.params.get(name).value.shape() != p.value.shape()) {
      throw ConfigError("checkpoint parameter " + name + " has shape " +
                        shape_string(c.params.get(name).value.shape()) + ", config expects " +
                        shape_string(p.value.shape()));
    }
  }
  if (c.params.size() != reference.params().size()) {
    throw ConfigError("checkpoint has parameters the config does not define");
  }
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& dir, std::size_t num_predicates,
                           std::size_t num_classes) {
  Checkpoint c = load_checkpoint(dir);
  if (c.model.num_predicates != num_predicates || c.model.num_classes != num_classes) {
    throw ConfigError("checkpoint was trained with " + std::to_string(c.model.num_predicates) +
                      " predicates and " + std::to_string(c.model.num_classes) +
                      " classes; data has " + std::to_string(num_predicates) + " and " +
                      std::to_string(num_classes));
  }
  return c;
}

std::vector<VideoSample> prepare_samples(const Dataset& inputs, Task task, const ModelConfig& config,
                                         const Dataset* ground_truth) {
  std::map<std::string, const VideoAnnotation*> gt_by_id;
  if (ground_truth != nullptr) {
    for (const auto& v : ground_truth->videos) gt_by_id[v.video_id] = &v;
  }
  if (task == Task::kSGGen && ground_truth == nullptr) {
    throw ConfigError("sggen needs ground-truth annotations to label detector candidates");
  }
  std::vector<VideoSample> out;
  out.reserve(inputs.videos.size());
  for (const auto& v : inputs.videos) {
    const VideoAnnotation* gt = nullptr;
    if (ground_truth != nullptr) {
      const auto it = gt_by_id.find(v.video_id);
      if (it == gt_by_id.end()) throw DataError("no ground truth for video " + v.video_id);
      gt = it->second;
    }
    out.push_back(prepare_sample(inputs, v, task, config, gt));
  }
  return out;
}

}  // namespace stket
