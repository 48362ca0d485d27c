// ncprobe command-line driver.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 malformed input
// file, 4 input file version mismatch.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncprobe/cluster.hpp"
#include "ncprobe/doubleint.hpp"
#include "ncprobe/io.hpp"
#include "ncprobe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ncprobe;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitVersion = 4;

std::vector<int> parse_k_range(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw CLI::ValidationError("--k-range", "expected a:b, got '" + s + "'");
  try {
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--k-range", "expected a:b, got '" + s + "'");
  }
}

NCWeights parse_weights(const std::string& s) {
  std::vector<double> w;
  std::stringstream ss(s);
  std::string part;
  try {
    while (std::getline(ss, part, ',')) w.push_back(std::stod(part));
  } catch (const std::exception&) {
    w.clear();
  }
  if (w.size() != 3) throw CLI::ValidationError("--weights", "expected w1,w2,w3, got '" + s + "'");
  return {w[0], w[1], w[2]};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(part);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_atomic(p, text);
}

std::vector<double> nc_values(const std::optional<NCReport>& r) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (!r) return {nan, nan, nan};
  return {r->cdnv_mean, r->std_norm, r->std_angle};
}

// ------------------------------------------------------------ doubleint

struct DoubleIntArgs {
  int n = 5000;
  double radius = 10.0;
  std::uint64_t seed = 0;
  std::string out;
  doubleint::ProbeConfig probe;
  int starts = 200;
  double tolerance = 0.05;
};

int doubleint_gen(const DoubleIntArgs& a) {
  const auto d = doubleint::generate_bc_dataset(a.n, a.radius, a.seed);
  CsvTable t({"q", "v", "control"});
  for (std::size_t i = 0; i < d.inputs.size(); ++i)
    t.add({d.inputs[i].q, d.inputs[i].v, static_cast<double>(doubleint::label_to_control(d.labels[i]))});
  write_text(a.out, t.str());
  return 0;
}

int doubleint_train(DoubleIntArgs a) {
  const fs::path dir(a.out.empty() ? "." : a.out);
  fs::create_directories(dir);
  a.probe.seed = a.seed;
  const auto data = doubleint::generate_bc_dataset(a.n, a.radius, a.seed);
  const LabeledSet ls = data.labeled();
  CsvTable nc({"epoch", "cdnv", "std_norm", "std_angle", "cos_01", "cos_02", "cos_12", "norm_0", "norm_1", "norm_2"});
  auto record = [&](int epoch, const Network& net) {
    const NCReport r = nc_report(extract_features(net, ls.inputs, ls.labels, 3));
    nc.add({static_cast<double>(epoch), r.cdnv_mean, r.std_norm, r.std_angle, r.cosines(0, 1), r.cosines(0, 2),
            r.cosines(1, 2), r.class_norms[0], r.class_norms[1], r.class_norms[2]});
  };
  record(0, doubleint::init_probe(a.probe));
  auto [net, history] = doubleint::train_probe(data, a.probe, record);
  CsvTable hist({"epoch", "loss", "class_error"});
  for (const auto& e : history.epochs) hist.add({static_cast<double>(e.epoch), e.loss, e.class_error.value_or(0.0)});
  hist.save(dir / "history.csv");
  nc.save(dir / "nc.csv");
  Checkpoint ck;
  ck.networks = {{"probe", net}};
  ck.seed = a.seed;
  ck.epoch = a.probe.epochs;
  ck.meta = {{"kind", "doubleint_probe"}, {"n", a.n}, {"radius", a.radius}};
  save_checkpoint(dir / "probe.ckpt", ck);
  return 0;
}

int doubleint_oracle_check(const DoubleIntArgs& a) {
  const doubleint::MinTimeOracle oracle;
  const auto rows = doubleint::oracle_check(oracle, a.starts, a.radius, a.seed, a.tolerance);
  CsvTable t({"q0", "v0", "policy_time", "oracle_time", "within"});
  int failures = 0;
  for (const auto& r : rows) {
    t.add({r.start.q, r.start.v, r.policy_time, r.oracle_time, r.within ? 1.0 : 0.0});
    failures += !r.within;
  }
  write_text(a.out, t.str());
  std::cerr << "oracle-check: " << rows.size() - static_cast<std::size_t>(failures) << "/" << rows.size()
            << " within tolerance\n";
  return failures == 0 ? 0 : kExitRuntime;
}

// ----------------------------------------------------------------- push

struct PushArgs {
  std::string shape = "T";
  int n = 100;
  std::uint64_t seed = 0;
  std::string out;
  std::string demos;
  std::string policy;
  std::string encoder;
  std::vector<std::string> checkpoints;
  int epochs = -1;
  int tasks = 20;
  std::string strategy = "goal";
  std::vector<int> bins;
  std::string k_range = "2:8";
  std::string weights = "1,1,1";
  int checkpoint_every = 0;
  std::string history;
  std::string shapes = "T,square";
  int k = 2;
  int h = 8;
};

BCConfig bc_config(const PushArgs& a) {
  BCConfig cfg;
  cfg.policy.k = a.k;
  cfg.policy.h = a.h;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  return cfg;
}

std::vector<Sample> load_samples(const PushArgs& a, std::vector<Demonstration>& demos) {
  demos = load_dataset(a.demos);
  if (demos.empty()) throw std::invalid_argument(a.demos + ": no demonstrations");
  return extract_samples(demos, a.k, a.h);
}

void save_history(const std::string& path, const TrainHistory& h) {
  if (path.empty()) return;
  CsvTable t({"epoch", "loss"});
  for (const auto& e : h.epochs) t.add({static_cast<double>(e.epoch), e.loss});
  write_text(path, t.str());
}

int push_gen_demos(const PushArgs& a) {
  const auto demos = generate_demos(shape_from_string(a.shape), a.n, a.seed);
  write_text(a.out, dataset_to_string(demos));
  return 0;
}

PolicyCallback checkpoint_writer(const PushArgs& a, const fs::path& dir) {
  if (a.checkpoint_every <= 0) return {};
  fs::create_directories(dir);
  return [&a, dir](int epoch, const Policy& p) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%05d.ckpt", epoch);
    save_checkpoint(dir / name, policy_checkpoint(p, a.seed, epoch));
  };
}

std::vector<int> every(int step, int last) {
  std::vector<int> e;
  if (step <= 0) return e;
  for (int i = 0; i <= last; i += step) e.push_back(i);
  if (e.back() != last) e.push_back(last);
  return e;
}

int push_train_bc(const PushArgs& a) {
  std::vector<Demonstration> demos;
  const auto samples = load_samples(a, demos);
  BCConfig cfg = bc_config(a);
  cfg.snapshots = every(a.checkpoint_every, cfg.epochs);
  const fs::path dir = fs::path(a.out).replace_extension("").string() + "_checkpoints";
  const BCResult r = train_bc(samples, cfg, nullptr, checkpoint_writer(a, dir));
  save_checkpoint(a.out, policy_checkpoint(r.policy, a.seed, cfg.epochs));
  save_history(a.history, r.history);
  return 0;
}

int push_pretrain_nc(const PushArgs& a) {
  std::vector<Demonstration> demos;
  const auto samples = load_samples(a, demos);
  RepoBinning b;
  b.bins = a.bins.empty() ? 2 : a.bins.front();
  b.validate();
  const auto labels = label_dataset(samples, demos, strategy_from_string(a.strategy), b, a.h);
  PolicyConfig pc;
  pc.k = a.k;
  pc.h = a.h;
  PretrainConfig cfg;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.weights = parse_weights(a.weights);
  std::vector<double> losses;
  const Network enc =
      pretrain_encoder_nc(sample_inputs(samples), labels, init_encoder(pc, split_seed(a.seed, 1)), cfg, &losses);
  save_checkpoint(a.out, encoder_checkpoint(enc, a.k, a.seed, cfg.epochs));
  if (!a.history.empty()) {
    CsvTable t({"epoch", "nc_loss"});
    for (std::size_t i = 0; i < losses.size(); ++i) t.add({static_cast<double>(i + 1), losses[i]});
    write_text(a.history, t.str());
  }
  return 0;
}

int push_finetune(const PushArgs& a) {
  std::vector<Demonstration> demos;
  const auto samples = load_samples(a, demos);
  const Network enc = encoder_from_checkpoint(load_checkpoint(a.encoder));
  BCConfig cfg = bc_config(a);
  cfg.snapshots = every(a.checkpoint_every, cfg.epochs);
  const fs::path dir = fs::path(a.out).replace_extension("").string() + "_checkpoints";
  const BCResult r = finetune(enc, samples, cfg, nullptr, checkpoint_writer(a, dir));
  save_checkpoint(a.out, policy_checkpoint(r.policy, a.seed, cfg.epochs));
  save_history(a.history, r.history);
  return 0;
}

int push_eval(const PushArgs& a) {
  const Policy p = policy_from_checkpoint(load_checkpoint(a.policy));
  const auto tasks = make_tasks(shape_from_string(a.shape), a.tasks, a.seed);
  const EvalResult r = evaluate_policy(p, tasks);
  const json j = {{"mean_score", r.mean_score}, {"scores", r.scores}};
  write_text(a.out, j.dump() + "\n");
  return 0;
}

int push_nc_curve(const PushArgs& a) {
  std::vector<Demonstration> demos;
  const auto samples = load_samples(a, demos);
  std::vector<fs::path> paths;
  for (const auto& c : a.checkpoints) {
    if (fs::is_directory(c)) {
      for (const auto& e : fs::directory_iterator(c))
        if (e.path().extension() == ".ckpt") paths.push_back(e.path());
    } else {
      paths.emplace_back(c);
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw std::invalid_argument("nc-curve: no checkpoints given");
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(load_checkpoint(p));
  std::vector<RepoBinning> binnings;
  for (int bins : a.bins.empty() ? std::vector<int>{2} : a.bins) {
    RepoBinning b;
    b.bins = bins;
    b.validate();
    binnings.push_back(b);
  }
  const auto curves = nc_curve(cks, samples, demos, strategy_from_string(a.strategy), binnings);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  for (const auto& [bins, rows] : curves) {
    CsvTable t({"epoch", "cdnv", "std_norm", "std_angle"});
    for (const auto& r : rows) {
      auto v = nc_values(r.report);
      v.insert(v.begin(), static_cast<double>(r.epoch));
      t.add(v);
    }
    t.save(dir / ("nc_" + a.strategy + "_bins" + std::to_string(bins) + ".csv"));
  }
  return 0;
}

int push_kmeans(const PushArgs& a) {
  std::vector<Demonstration> demos;
  const auto samples = load_samples(a, demos);
  const auto range = parse_k_range(a.k_range);
  const Matrix x = control_matrix(samples);
  const SelectKResult r = select_k(x, range[0], range[1], a.seed);
  CsvTable t({"k", "silhouette"});
  for (std::size_t i = 0; i < r.ks.size(); ++i) t.add({static_cast<double>(r.ks[i]), r.scores[i]});
  write_text(a.out, t.str());
  std::cerr << "kmeans: best k = " << r.best_k << "\n";
  return 0;
}

int push_continual(const PushArgs& a) {
  ContinualConfig cfg;
  cfg.bc = bc_config(a);
  cfg.demos_per_domain = a.n;
  cfg.eval_tasks = a.tasks;
  cfg.snapshots = every(a.checkpoint_every > 0 ? a.checkpoint_every : cfg.bc.epochs, cfg.bc.epochs);
  std::vector<DomainData> domains;
  const auto shapes = split_list(a.shapes);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    domains.push_back(make_domain(shape_from_string(shapes[i]), cfg.demos_per_domain, cfg.eval_tasks,
                                  split_seed(a.seed, 20 + i), cfg.bc.policy, cfg.binning));
  }
  const auto phases = continual_experiment(domains, cfg);
  CsvTable t({"phase", "domain", "epoch", "role", "score", "goal_cdnv", "goal_std_norm", "goal_std_angle",
              "action_cdnv", "action_std_norm", "action_std_angle"});
  auto row = [&](std::size_t phase, const std::string& domain, int epoch, const char* role, const DomainTrack& d) {
    std::vector<std::string> r{std::to_string(phase + 1), domain, std::to_string(epoch), role,
                               format_number(d.score)};
    for (double v : nc_values(d.goal)) r.push_back(format_number(v));
    for (double v : nc_values(d.action)) r.push_back(format_number(v));
    t.add(std::move(r));
  };
  for (std::size_t i = 0; i < phases.size(); ++i) {
    for (const auto& s : phases[i].snapshots) {
      row(i, to_string(phases[i].domain), s.epoch, "target", s.target);
      if (s.source) row(i, to_string(phases[i - 1].domain), s.epoch, "source", *s.source);
    }
  }
  write_text(a.out, t.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-collapse probes for behavior-cloned control policies"};
  app.require_subcommand(1);

  DoubleIntArgs di;
  auto* dcmd = app.add_subcommand("doubleint", "Double-integrator toy problem")->require_subcommand(1);
  auto* dgen = dcmd->add_subcommand("gen", "Write the balanced behavior-cloning dataset as CSV");
  auto* dtrain = dcmd->add_subcommand("train", "Train the probe; writes history.csv, nc.csv and probe.ckpt");
  auto* dcheck = dcmd->add_subcommand("oracle-check", "Compare the closed-form policy with value iteration");
  for (auto* c : {dgen, dtrain, dcheck}) {
    c->add_option("--seed", di.seed, "RNG seed");
    c->add_option("--radius", di.radius, "Sampling ball radius");
  }
  for (auto* c : {dgen, dtrain}) c->add_option("--n", di.n, "Samples per class");
  dgen->add_option("-o,--out", di.out, "Output CSV")->required();
  dtrain->add_option("-o,--out", di.out, "Output directory (default: current)");
  dtrain->add_option("--epochs", di.probe.epochs, "Training epochs");
  dtrain->add_option("--lr", di.probe.lr, "Adam learning rate");
  dtrain->add_option("--weight-decay", di.probe.weight_decay, "Decoupled weight decay");
  dcheck->add_option("--starts", di.starts, "Number of random starts");
  dcheck->add_option("--tolerance", di.tolerance, "Relative tolerance");
  dcheck->add_option("-o,--out", di.out, "Output CSV (default: stdout)");

  PushArgs pa;
  auto* pcmd = app.add_subcommand("push", "Planar pushing pipeline")->require_subcommand(1);
  auto* gen = pcmd->add_subcommand("gen-demos", "Record scripted-expert demonstrations (JSON lines)");
  auto* train = pcmd->add_subcommand("train-bc", "Behavior cloning from demonstrations");
  auto* pre = pcmd->add_subcommand("pretrain-nc", "Pretrain an encoder by minimizing the NC loss");
  auto* fine = pcmd->add_subcommand("finetune", "Behavior cloning from a pretrained encoder");
  auto* eval = pcmd->add_subcommand("eval", "Closed-loop coverage of a policy checkpoint");
  auto* curve = pcmd->add_subcommand("nc-curve", "NC metrics of checkpoints, one CSV per binning");
  auto* km = pcmd->add_subcommand("kmeans", "Silhouette scores of k-means over control windows");
  auto* cont = pcmd->add_subcommand("continual", "Sequential training across shapes");
  for (auto* c : {gen, train, pre, fine, eval, curve, km, cont}) c->add_option("--seed", pa.seed, "RNG seed");
  for (auto* c : {train, pre, fine, curve, km}) {
    c->add_option("--demos", pa.demos, "Demonstration dataset")->required();
    c->add_option("--window", pa.k, "Observations per sample (K)");
    c->add_option("--horizon", pa.h, "Controls per sample (H)");
  }
  for (auto* c : {train, pre, fine, cont}) c->add_option("--epochs", pa.epochs, "Training epochs");
  for (auto* c : {train, pre, fine}) c->add_option("--history", pa.history, "Per-epoch loss CSV");
  for (auto* c : {train, fine}) c->add_option("--checkpoint-every", pa.checkpoint_every, "Snapshot period in epochs");
  for (auto* c : {gen, train, pre, fine, curve}) c->add_option("-o,--out", pa.out, "Output path")->required();
  for (auto* c : {eval, km, cont}) c->add_option("-o,--out", pa.out, "Output path (default: stdout)");
  gen->add_option("--shape", pa.shape, "T, square, R, O or B");
  gen->add_option("--n", pa.n, "Number of demonstrations");
  for (auto* c : {pre, curve}) {
    c->add_option("--strategy", pa.strategy, "goal or action")->check(CLI::IsMember({"goal", "action"}));
    c->add_option("--bins", pa.bins, "Bins per dimension (repeatable)")->check(CLI::IsMember({2, 4, 6}));
  }
  pre->add_option("--weights", pa.weights, "NC loss weights w_cdnv,w_norm,w_angle");
  fine->add_option("--encoder", pa.encoder, "Encoder checkpoint")->required();
  eval->add_option("--policy", pa.policy, "Policy checkpoint")->required();
  eval->add_option("--shape", pa.shape, "Task shape");
  for (auto* c : {eval, cont}) c->add_option("--tasks", pa.tasks, "Number of evaluation tasks");
  curve->add_option("--checkpoints", pa.checkpoints, "Checkpoint files or directories")->required();
  km->add_option("--k-range", pa.k_range, "Range of k, a:b");
  cont->add_option("--shapes", pa.shapes, "Comma-separated domain sequence");
  cont->add_option("--n", pa.n, "Demonstrations per domain");
  cont->add_option("--snapshot-every", pa.checkpoint_every, "Snapshot period in epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*dgen) return doubleint_gen(di);
    if (*dtrain) return doubleint_train(di);
    if (*dcheck) return doubleint_oracle_check(di);
    if (*gen) return push_gen_demos(pa);
    if (*train) return push_train_bc(pa);
    if (*pre) return push_pretrain_nc(pa);
    if (*fine) return push_finetune(pa);
    if (*eval) return push_eval(pa);
    if (*curve) return push_nc_curve(pa);
    if (*km) return push_kmeans(pa);
    if (*cont) return push_continual(pa);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == FormatErrorCode::kVersionMismatch ? kExitVersion : kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
