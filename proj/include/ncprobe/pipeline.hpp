#pragma once

// Experiment drivers for the pushing domain: behavior cloning with NC
// snapshots, receding-horizon evaluation, NC pretraining of the encoder,
// finetuning, the continual-domain protocol and NC curves over checkpoints.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/demo.hpp"
#include "ncprobe/features.hpp"
#include "ncprobe/io.hpp"
#include "ncprobe/mlp.hpp"
#include "ncprobe/ncmetrics.hpp"
#include "ncprobe/parallel.hpp"
#include "ncprobe/repoclass.hpp"

namespace ncprobe {

/// Observation-window encoder followed by a control-window decoder.
struct Policy {
  Network encoder;
  Network decoder;
  int k = 2;
  int h = 8;
  double v_max = 0.15;

  int feature_dim() const { return encoder.output_size(); }

  void validate() const {
    if (encoder.output_size() != decoder.input_size()) {
      throw DimensionError("Policy: encoder output " + std::to_string(encoder.output_size()) +
                           " != decoder input " + std::to_string(decoder.input_size()));
    }
    if (encoder.input_size() != k * kObservationDim) throw DimensionError("Policy: encoder input width != K * obs dim");
    if (decoder.output_size() != 2 * h) throw DimensionError("Policy: decoder output width != 2H");
  }
};

struct PolicyConfig {
  int k = 2;
  int h = 8;
  int feature_dim = 64;
  int hidden = 64;
  int decoder_hidden = 64;  // 0 makes the decoder a single linear map
  double v_max = 0.15;
};

inline Network init_encoder(const PolicyConfig& pc, std::uint64_t seed) {
  return init_network({pc.k * kObservationDim, pc.hidden, pc.hidden, pc.feature_dim}, Activation::kRelu, seed,
                      Activation::kRelu);
}

inline Network init_decoder(const PolicyConfig& pc, std::uint64_t seed) {
  if (pc.decoder_hidden == 0) return init_network({pc.feature_dim, 2 * pc.h}, Activation::kRelu, seed, Activation::kIdentity);
  return init_network({pc.feature_dim, pc.decoder_hidden, 2 * pc.h}, Activation::kRelu, seed, Activation::kIdentity);
}

inline Network concat(const Network& a, const Network& b) {
  Network n = a;
  n.layers.insert(n.layers.end(), b.layers.begin(), b.layers.end());
  return n;
}

inline Network slice(const Network& n, std::size_t begin, std::size_t end) {
  Network out;
  out.layers.assign(n.layers.begin() + static_cast<std::ptrdiff_t>(begin), n.layers.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

/// Positions are scaled down so all inputs are of order one.
inline Vector normalize_observation(const Vector& window) {
  Vector x = window;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto j = i % kObservationDim;
    if (j != 2 && j != 3) x(i) *= 0.25;
  }
  return x;
}

inline Matrix sample_inputs(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("sample_inputs: no samples");
  Matrix x(static_cast<Eigen::Index>(samples.size()), samples.front().observation.size());
  for (std::size_t i = 0; i < samples.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = normalize_observation(samples[i].observation).transpose();
  return x;
}

/// Control windows in units of v_max.
inline Matrix sample_targets(const std::vector<Sample>& samples, double v_max) {
  Matrix y(static_cast<Eigen::Index>(samples.size()), samples.front().controls.size());
  for (std::size_t i = 0; i < samples.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = samples[i].controls.transpose() / v_max;
  return y;
}

inline Matrix encode(const Network& encoder, const Matrix& inputs) { return forward_batch(encoder, inputs); }

/// Labels used to probe the encoder's features during training.
struct ProbeLabels {
  std::vector<int> goal;
  std::vector<int> action;
  int num_classes = 0;
};

inline ProbeLabels probe_labels(const std::vector<Sample>& samples, const std::vector<Demonstration>& demos,
                                const RepoBinning& b, int h) {
  return {label_dataset(samples, demos, LabelStrategy::kGoal, b, h),
          label_dataset(samples, demos, LabelStrategy::kAction, b, h), b.num_classes()};
}

/// NC report over classes with at least two samples; empty when fewer than two
/// such classes exist or the metrics are undefined.
inline std::optional<NCReport> probe_report(const Matrix& features, const std::vector<int>& labels, int num_classes) {
  FeatureSet fs{features, labels, num_classes};
  const FeatureSet kept = filter_classes(fs, 2);
  if (kept.num_classes < 2) return std::nullopt;
  try {
    return nc_report(kept);
  } catch (const std::domain_error&) {
    return std::nullopt;
  }
}

struct NCSnapshot {
  int epoch = 0;
  std::optional<NCReport> goal;
  std::optional<NCReport> action;
};

struct BCConfig {
  PolicyConfig policy;
  int epochs = 300;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.0;  // decoupled, weights only
  std::uint64_t seed = 0;
  std::vector<int> snapshots;  // epochs at which NC is probed (0 = before training)
};

struct BCResult {
  Policy policy;
  TrainHistory history;
  std::vector<NCSnapshot> snapshots;
};

inline NCSnapshot snapshot(int epoch, const Network& encoder, const Matrix& inputs, const ProbeLabels& labels) {
  const Matrix f = encode(encoder, inputs);
  return {epoch, probe_report(f, labels.goal, labels.num_classes), probe_report(f, labels.action, labels.num_classes)};
}

/// Receives the policy at each snapshot epoch.
using PolicyCallback = std::function<void(int, const Policy&)>;

/// Joint encoder+decoder regression starting from `encoder` and a fresh decoder.
inline BCResult finetune(const Network& encoder, const std::vector<Sample>& samples, const BCConfig& cfg,
                         const ProbeLabels* labels = nullptr, const PolicyCallback& on_snapshot = {}) {
  if (samples.empty()) throw std::invalid_argument("finetune: no samples");
  const PolicyConfig& pc = cfg.policy;
  if (encoder.output_size() != pc.feature_dim || encoder.input_size() != pc.k * kObservationDim) {
    throw DimensionError("finetune: encoder shape does not match the policy configuration");
  }
  const Matrix x = sample_inputs(samples);
  const Matrix y = sample_targets(samples, pc.v_max);
  const std::size_t enc_layers = encoder.layers.size();
  Network net = concat(encoder, init_decoder(pc, split_seed(cfg.seed, 2)));

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.optimizer.lr = cfg.lr;
  tc.optimizer.weight_decay = cfg.weight_decay;
  tc.seed = split_seed(cfg.seed, 3);

  BCResult res;
  auto wants = [&](int e) { return std::find(cfg.snapshots.begin(), cfg.snapshots.end(), e) != cfg.snapshots.end(); };
  auto split = [&](const Network& n) {
    return Policy{slice(n, 0, enc_layers), slice(n, enc_layers, n.layers.size()), pc.k, pc.h, pc.v_max};
  };
  auto visit = [&](int epoch, const Network& n) {
    if (!wants(epoch)) return;
    if (labels) res.snapshots.push_back(snapshot(epoch, slice(n, 0, enc_layers), x, *labels));
    if (on_snapshot) on_snapshot(epoch, split(n));
  };
  visit(0, net);
  auto [trained, history] = train_regressor(x, y, std::move(net), tc, visit);
  res.policy = split(trained);
  res.history = std::move(history);
  return res;
}

inline BCResult train_bc(const std::vector<Sample>& samples, const BCConfig& cfg, const ProbeLabels* labels = nullptr,
                         const PolicyCallback& on_snapshot = {}) {
  return finetune(init_encoder(cfg.policy, split_seed(cfg.seed, 1)), samples, cfg, labels, on_snapshot);
}

// ------------------------------------------------------------ evaluation

/// Maps the current state and the K-observation window to a pusher velocity.
using Controller = std::function<Vec2(const SimState&, const Vector& window)>;

/// Receding horizon: predict H controls, execute only the first.
inline Controller policy_controller(const Policy& p) {
  return [&p](const SimState&, const Vector& window) {
    const Matrix in = normalize_observation(window).transpose();
    const Matrix out = forward_batch(p.decoder, forward_batch(p.encoder, in));
    Vec2 u(out(0, 0), out(0, 1));
    u *= p.v_max;
    const double n = u.norm();
    if (n > p.v_max) u *= p.v_max / n;
    return u;
  };
}

inline Controller expert_controller(ScriptedExpert& expert, RngStream& rng) {
  return [&expert, &rng](const SimState& s, const Vector&) { return expert.act(s, rng).velocity; };
}

struct EvalConfig {
  int max_steps = 300;
  double stop_coverage = 0.95;
  int k = 2;
  double dt = 1.0;
};

/// Final coverage of one closed-loop rollout.
inline double run_task(const SimState& task, const Controller& ctrl, const EvalConfig& cfg) {
  SimState s = task;
  std::vector<Vector> obs{observe(s)};
  for (int step_i = 0; step_i < cfg.max_steps; ++step_i) {
    if (coverage(s) >= cfg.stop_coverage) break;
    const Vector window = observation_window(obs, static_cast<int>(obs.size()) - 1, cfg.k);
    s = step(s, ctrl(s, window), cfg.dt);
    obs.push_back(observe(s));
  }
  return coverage(s);
}

struct EvalResult {
  double mean_score = 0.0;
  std::vector<double> scores;
};

inline EvalResult evaluate(const std::vector<SimState>& tasks, const Controller& ctrl, const EvalConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: no tasks");
  EvalResult r;
  for (const auto& t : tasks) r.scores.push_back(run_task(t, ctrl, cfg));
  for (double s : r.scores) r.mean_score += s;
  r.mean_score /= static_cast<double>(r.scores.size());
  return r;
}

inline EvalResult evaluate_policy(const Policy& p, const std::vector<SimState>& tasks, EvalConfig cfg = {}) {
  p.validate();
  cfg.k = p.k;
  return evaluate(tasks, policy_controller(p), cfg);
}

/// Evaluation tasks; seeds are disjoint from the demo seeds of the same run.
inline std::vector<SimState> make_tasks(ShapeKind kind, int n, std::uint64_t seed, const TaskConfig& tc = {}) {
  std::vector<SimState> tasks;
  for (int i = 0; i < n; ++i) {
    RngStream rng(split_seed(seed ^ 0x7a5c0ffee5eedULL, static_cast<std::uint64_t>(i)));
    tasks.push_back(random_task(kind, rng, tc));
  }
  return tasks;
}

// ---------------------------------------------------------- NC pretraining

struct PretrainConfig {
  int epochs = 100;
  int per_class = 16;  // samples drawn per present class in each batch
  double lr = 1e-3;
  NCWeights weights;
  std::uint64_t seed = 0;
};

/// Minimizes the NC loss of encoder features under class-stratified batches.
inline Network pretrain_encoder_nc(const Matrix& inputs, const std::vector<int>& labels, Network encoder,
                                   const PretrainConfig& cfg, std::vector<double>* losses = nullptr) {
  if (static_cast<Eigen::Index>(labels.size()) != inputs.rows()) throw DimensionError("pretrain: label count mismatch");
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> pools;
  for (auto& c : by_class)
    if (c.size() >= 2) pools.push_back(std::move(c));
  if (pools.size() < 2) throw std::invalid_argument("pretrain: need at least 2 classes with >= 2 samples");

  RngStream rng(split_seed(cfg.seed, 4));
  OptimizerConfig oc;
  oc.lr = cfg.lr;
  Optimizer opt(encoder, oc);
  std::vector<std::size_t> cursor(pools.size(), 0);
  for (auto& p : pools) rng.shuffle(p.begin(), p.end());
  std::size_t batch_rows = 0;
  for (const auto& p : pools) batch_rows += std::min<std::size_t>(p.size(), static_cast<std::size_t>(cfg.per_class));
  const auto batches = std::max<std::size_t>(1, (static_cast<std::size_t>(inputs.rows()) + batch_rows - 1) / batch_rows);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<int> rows;
      std::vector<int> batch_labels;
      for (std::size_t c = 0; c < pools.size(); ++c) {
        auto& pool = pools[c];
        const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(cfg.per_class));
        for (std::size_t j = 0; j < take; ++j) {
          if (cursor[c] == pool.size()) {
            rng.shuffle(pool.begin(), pool.end());
            cursor[c] = 0;
          }
          rows.push_back(pool[cursor[c]++]);
          batch_labels.push_back(static_cast<int>(c));
        }
      }
      Matrix xb(static_cast<Eigen::Index>(rows.size()), inputs.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) xb.row(static_cast<Eigen::Index>(i)) = inputs.row(rows[i]);
      Tape tape;
      const BoundNetwork bound = bind(tape, encoder);
      const NodeId f = apply(tape, encoder, bound, tape.constant(std::move(xb)));
      const NCLossNodes loss = nc_loss(tape, f, batch_labels, cfg.weights);
      const double lv = tape.scalar_value(loss.total);
      if (!std::isfinite(lv)) throw TrainingError("pretrain: non-finite NC loss at epoch " + std::to_string(epoch));
      loss_sum += lv;
      tape.backward(loss.total);
      opt.step(encoder, gradients(tape, bound));
    }
    if (losses) losses->push_back(loss_sum / static_cast<double>(batches));
  }
  return encoder;
}

// --------------------------------------------------------- continual

struct DomainTrack {
  double score = 0.0;
  std::optional<NCReport> goal;
  std::optional<NCReport> action;
};

struct ContinualSnapshot {
  int epoch = 0;
  DomainTrack target;
  std::optional<DomainTrack> source;
};

struct PhaseHistory {
  ShapeKind domain = ShapeKind::kT;
  std::vector<ContinualSnapshot> snapshots;
};

struct DomainData {
  ShapeKind kind = ShapeKind::kT;
  std::vector<Demonstration> demos;
  std::vector<Sample> samples;
  ProbeLabels labels;
  Matrix inputs;
  Matrix targets;
  std::vector<SimState> tasks;
};

inline DomainData make_domain(ShapeKind kind, int n_demos, int n_tasks, std::uint64_t seed, const PolicyConfig& pc,
                              const RepoBinning& b) {
  DomainData d;
  d.kind = kind;
  d.demos = generate_demos(kind, n_demos, seed);
  d.samples = extract_samples(d.demos, pc.k, pc.h);
  d.labels = probe_labels(d.samples, d.demos, b, pc.h);
  d.inputs = sample_inputs(d.samples);
  d.targets = sample_targets(d.samples, pc.v_max);
  d.tasks = make_tasks(kind, n_tasks, seed);
  return d;
}

struct ContinualConfig {
  BCConfig bc;
  int demos_per_domain = 100;
  int eval_tasks = 20;
  EvalConfig eval;
  RepoBinning binning;
  std::vector<int> snapshots;  // epochs within each phase; 0 = phase start
};

/// Trains one policy through the domains in order. Each phase tracks the
/// current (target) domain and the one before it (source).
inline std::vector<PhaseHistory> continual_experiment(const std::vector<DomainData>& domains,
                                                      const ContinualConfig& cfg) {
  if (domains.size() < 2) throw std::invalid_argument("continual_experiment: need at least 2 domains");
  const PolicyConfig& pc = cfg.bc.policy;
  Network net = concat(init_encoder(pc, split_seed(cfg.bc.seed, 1)), init_decoder(pc, split_seed(cfg.bc.seed, 2)));
  const std::size_t enc_layers = 3;
  auto track = [&](const Network& n, const DomainData& d) {
    Policy p{slice(n, 0, enc_layers), slice(n, enc_layers, n.layers.size()), pc.k, pc.h, pc.v_max};
    EvalConfig ec = cfg.eval;
    ec.k = pc.k;
    DomainTrack t;
    t.score = evaluate(d.tasks, policy_controller(p), ec).mean_score;
    const Matrix f = encode(p.encoder, d.inputs);
    t.goal = probe_report(f, d.labels.goal, d.labels.num_classes);
    t.action = probe_report(f, d.labels.action, d.labels.num_classes);
    return t;
  };
  auto wants = [&](int e) { return std::find(cfg.snapshots.begin(), cfg.snapshots.end(), e) != cfg.snapshots.end(); };

  std::vector<PhaseHistory> phases;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const DomainData& d = domains[i];
    PhaseHistory ph;
    ph.domain = d.kind;
    auto snap = [&](int epoch, const Network& n) {
      ContinualSnapshot s;
      s.epoch = epoch;
      s.target = track(n, d);
      if (i > 0) s.source = track(n, domains[i - 1]);
      ph.snapshots.push_back(std::move(s));
    };
    if (wants(0)) snap(0, net);
    TrainConfig tc;
    tc.epochs = cfg.bc.epochs;
    tc.batch_size = cfg.bc.batch_size;
    tc.optimizer.lr = cfg.bc.lr;
    tc.optimizer.weight_decay = cfg.bc.weight_decay;
    tc.seed = split_seed(cfg.bc.seed, 10 + i);
    auto [trained, history] = train_regressor(d.inputs, d.targets, std::move(net), tc, [&](int epoch, const Network& n) {
      if (wants(epoch)) snap(epoch, n);
    });
    net = std::move(trained);
    phases.push_back(std::move(ph));
  }
  return phases;
}

// ------------------------------------------------------------ checkpoints

inline Checkpoint policy_checkpoint(const Policy& p, std::uint64_t seed, int epoch) {
  Checkpoint ck;
  ck.networks = {{"encoder", p.encoder}, {"decoder", p.decoder}};
  ck.seed = seed;
  ck.epoch = epoch;
  ck.meta = {{"kind", "policy"}, {"k", p.k}, {"h", p.h}, {"v_max", p.v_max}};
  return ck;
}

inline Policy policy_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "policy") throw std::invalid_argument("checkpoint does not hold a policy");
  Policy p{ck.network("encoder"), ck.network("decoder"), ck.meta.at("k").get<int>(), ck.meta.at("h").get<int>(),
           ck.meta.at("v_max").get<double>()};
  p.validate();
  return p;
}

inline Checkpoint encoder_checkpoint(const Network& encoder, int k, std::uint64_t seed, int epoch) {
  Checkpoint ck;
  ck.networks = {{"encoder", encoder}};
  ck.seed = seed;
  ck.epoch = epoch;
  ck.meta = {{"kind", "encoder"}, {"k", k}};
  return ck;
}

/// The encoder of either an encoder or a policy checkpoint.
inline Network encoder_from_checkpoint(const Checkpoint& ck) {
  const std::string kind = ck.meta.value("kind", "");
  if (kind != "encoder" && kind != "policy") throw std::invalid_argument("checkpoint holds no encoder");
  return ck.network("encoder");
}

struct NCCurveRow {
  int epoch = 0;
  std::optional<NCReport> report;
};

/// One NC report per checkpoint for each binning, rows sorted by epoch.
inline std::map<int, std::vector<NCCurveRow>> nc_curve(const std::vector<Checkpoint>& checkpoints,
                                                       const std::vector<Sample>& samples,
                                                       const std::vector<Demonstration>& demos,
                                                       LabelStrategy strategy, const std::vector<RepoBinning>& binnings) {
  std::vector<const Checkpoint*> order;
  for (const auto& c : checkpoints) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(), [](const Checkpoint* a, const Checkpoint* b) { return a->epoch < b->epoch; });
  const Matrix x = sample_inputs(samples);
  std::map<int, std::vector<NCCurveRow>> out;
  for (const auto& b : binnings) {
    const Policy first = policy_from_checkpoint(*order.front());
    const auto labels = label_dataset(samples, demos, strategy, b, first.h);
    auto& rows = out[b.bins];
    for (const Checkpoint* c : order) {
      const Policy p = policy_from_checkpoint(*c);
      rows.push_back({c->epoch, probe_report(encode(p.encoder, x), labels, b.num_classes())});
    }
  }
  return out;
}

}  // namespace ncprobe
