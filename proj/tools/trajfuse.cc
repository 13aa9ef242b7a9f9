// Copyright 2026 The trajfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// trajfuse: data generation, training, evaluation, prediction and skill
// parameter optimization.
//
// Exit codes: 0 success, 1 other failure, 2 usage, 3 I/O, 4 schema or
// config mismatch.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajfuse/binary_io.h"
#include "trajfuse/checkpoint.h"
#include "trajfuse/dataset.h"
#include "trajfuse/optimizer.h"
#include "trajfuse/random.h"
#include "trajfuse/run_config.h"
#include "trajfuse/skill_world.h"
#include "trajfuse/trainer.h"

namespace fs = std::filesystem;
using namespace trajfuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitMismatch = 4;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GenDataArgs {
  std::string kind;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
  bool with_force = false;
  std::size_t image_size = 128;
};

struct TrainArgs {
  std::string config, data, out;
};

struct EvalArgs {
  std::string ckpt, data;
};

struct PredictArgs {
  std::string ckpt, data, out;
  std::size_t index = 0;
};

struct OptimizeArgs {
  std::string ckpt, objective, out, config, init_params, target;
  std::uint64_t env_seed = 0;
  std::uint64_t init_seed = 0;
  double lr = -1.0;
  std::size_t max_iters = 0;
  double force_limit = -1.0;
  std::size_t image_size = 128;
};

void MakeDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::IoError("cannot open " + path.string() + " for writing");
  return os;
}

void Finish(std::ofstream& os, const fs::path& path) {
  os.flush();
  if (!os) throw io::IoError("failed writing " + path.string());
}

void WriteCsvFile(const fs::path& path, const Trajectory& traj) {
  auto os = OpenOut(path);
  WriteTrajectoryCsv(os, traj);
  Finish(os, path);
}

WorldOptions OptionsFor(const ChannelSchema& schema, std::size_t image_size) {
  WorldOptions opts;
  opts.with_force = !ChannelsOfKind(schema, ChannelKind::kForce).empty();
  opts.image_size = image_size;
  return opts;
}

std::vector<double> ParseList(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw UsageError(what + ": cannot parse '" + item + "' as a number");
    }
    out.push_back(v);
  }
  return out;
}

SkillKind TaskKind(const Checkpoint& ck) {
  const auto kind = ParseSkillKind(ck.task);
  if (!kind) throw SchemaMismatchError("checkpoint task '" + ck.task + "' is not a skill kind");
  return *kind;
}

int RunGenData(const GenDataArgs& a) {
  const SkillKind kind = *ParseSkillKind(a.kind);
  WorldOptions opts;
  opts.with_force = a.with_force;
  opts.image_size = a.image_size;
  const Dataset ds = GenerateDataset(kind, a.n, a.seed, opts);
  SaveDataset(ds, a.out);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", ds.SuccessFraction());
  std::cout << "records " << ds.size() << "\nsuccess_fraction " << buf << "\nbytes "
            << fs::file_size(a.out) << "\n";
  return kExitOk;
}

int RunTrain(const TrainArgs& a) {
  const RunConfig cfg = LoadRunConfig(a.config);
  const Dataset ds = LoadDataset(a.data);
  const ModelConfig model = cfg.ResolvedModel();
  CheckCompatible(model, ds);
  const fs::path out(a.out);
  MakeDir(out);
  {
    auto os = OpenOut(out / "resolved_config.toml");
    os << ToToml(cfg);
    Finish(os, out / "resolved_config.toml");
  }
  auto log = OpenOut(out / "train_log.jsonl");
  const Checkpoint ck = Train(model, cfg.train, ds, &log);
  Finish(log, out / "train_log.jsonl");
  ck.Save(out / "checkpoint.bin");
  std::cout << "checkpoint " << (out / "checkpoint.bin").string() << " hash "
            << HexDigest(ck.Hash()) << "\n";
  return kExitOk;
}

int RunEval(const EvalArgs& a) {
  const Checkpoint ck = Checkpoint::Load(a.ckpt);
  const Dataset ds = LoadDataset(a.data);
  CheckCompatible(ck.config, ds);
  const EvalReport rep = Evaluate(ck, ds);
  std::cout << rep.Table();
  std::cout << nlohmann::json{{"eval", rep.ToJson()}}.dump() << "\n";
  return kExitOk;
}

int RunPredict(const PredictArgs& a) {
  const Checkpoint ck = Checkpoint::Load(a.ckpt);
  const Dataset ds = LoadDataset(a.data);
  CheckCompatible(ck.config, ds);
  if (a.index >= ds.size()) {
    throw UsageError("index " + std::to_string(a.index) + " out of range for " +
                     std::to_string(ds.size()) + " records");
  }
  const Record& r = ds.records[a.index];
  const Trajectory pred = ck.Model().Predict(r.plan, r.params, r.image, ck.stats);
  const fs::path out(a.out);
  MakeDir(out);
  WriteCsvFile(out / "predicted.csv", pred);
  WriteCsvFile(out / "ground_truth.csv", r.exec);
  std::cout << "predicted " << pred.length() << " points, ground truth " << r.exec.length()
            << (pred.truncated ? " (prediction truncated)" : "") << "\n";
  return kExitOk;
}

int RunOptimize(const OptimizeArgs& a) {
  const Checkpoint ck = Checkpoint::Load(a.ckpt);
  const SkillKind kind = TaskKind(ck);
  RunConfig cfg;
  if (!a.config.empty()) cfg = LoadRunConfig(a.config);
  Objective obj = cfg.objective;
  OptimOptions opt = cfg.optimize;
  const auto parsed = ParseObjectiveKind(a.objective);
  obj.kind = *parsed;
  if (a.lr >= 0.0) opt.lr = a.lr;
  if (a.max_iters > 0) opt.max_iters = a.max_iters;
  if (a.force_limit > 0.0) obj.force_limit = a.force_limit;
  if (!a.target.empty()) {
    const auto t = ParseList(a.target, "--target");
    if (t.size() != 2) throw UsageError("--target expects x,y");
    obj.target = {t[0], t[1]};
  }
  // channel check up front so a mismatch is reported before any work
  {
    const std::size_t need = obj.kind == ObjectiveKind::kReward       ? 1
                             : obj.kind == ObjectiveKind::kForceLimit ? 2
                             : obj.kind == ObjectiveKind::kSuccess    ? 3
                                                                      : 0;
    const ChannelKind kinds[] = {ChannelKind::kPose, ChannelKind::kReward, ChannelKind::kForce,
                                 ChannelKind::kSuccess};
    if (ChannelsOfKind(ck.config.schema, kinds[need]).empty()) {
      throw SchemaMismatchError(std::string("objective ") + ObjectiveKindName(obj.kind) +
                                " needs a " + ChannelKindName(kinds[need]) +
                                " channel; checkpoint schema is " +
                                SchemaString(ck.config.schema));
    }
  }

  std::vector<double> init;
  if (!a.init_params.empty()) {
    init = ParseList(a.init_params, "--init-params");
  } else {
    Rng rng(a.init_seed);
    for (const Bounds& b : DefaultBounds(kind)) init.push_back(rng.Uniform(b.lo, b.hi));
  }
  if (init.size() != ParamDim(kind)) {
    throw UsageError("--init-params: " + std::string(SkillKindName(kind)) + " expects " +
                     std::to_string(ParamDim(kind)) + " values");
  }
  const SkillInstance skill = MakeSkill(kind, init);
  try {
    CheckInBounds(skill);
  } catch (const std::out_of_range& e) {
    throw UsageError(std::string("--init-params: ") + e.what());
  }

  const WorldOptions world = OptionsFor(ck.config.schema, a.image_size);
  const EnvSpec env = MakeEnv(a.env_seed);
  const EnvImage image = RenderEnv(env, a.image_size);
  const OptimTrace trace = Optimize(ck, image, skill, obj, opt);
  const SkillInstance final_skill = MakeSkill(kind, trace.final_params);
  const OracleVerdict before = Oracle(skill, env, world);
  const OracleVerdict after = Oracle(final_skill, env, world);

  const fs::path out(a.out);
  MakeDir(out);
  {
    auto os = OpenOut(out / "trace.csv");
    WriteTraceCsv(os, trace);
    Finish(os, out / "trace.csv");
    auto js = OpenOut(out / "trace.jsonl");
    WriteTraceJsonl(js, trace);
    Finish(js, out / "trace.jsonl");
  }
  WriteCsvFile(out / "initial_plan.csv", Plan(skill, world));
  WriteCsvFile(out / "final_plan.csv", Plan(final_skill, world));
  const FusionModel model = ck.Model();
  WriteCsvFile(out / "initial_prediction.csv",
               model.Predict(Plan(skill, world), skill.params, image, ck.stats));
  WriteCsvFile(out / "final_prediction.csv",
               model.Predict(Plan(final_skill, world), final_skill.params, image, ck.stats));

  const double f0 = trace.steps.empty() ? 0.0 : trace.steps.front().objective;
  const double f1 = trace.steps.empty() ? 0.0 : trace.steps.back().objective;
  nlohmann::json summary = {
      {"objective", ObjectiveKindName(obj.kind)},
      {"env_seed", a.env_seed},
      {"initial_params", skill.params},
      {"final_params", trace.final_params},
      {"iterations", trace.steps.size()},
      {"converged", trace.converged},
      {"aborted", trace.aborted},
      {"stop_reason", trace.stop_reason},
      {"initial_objective", f0},
      {"last_objective", f1},
      {"oracle_initial", {{"success", before.success}, {"mean_reward", before.mean_reward}}},
      {"oracle_final", {{"success", after.success}, {"mean_reward", after.mean_reward}}}};
  {
    auto os = OpenOut(out / "summary.json");
    os << summary.dump(2) << "\n";
    Finish(os, out / "summary.json");
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "oracle %s -> %s | mean reward %.4f -> %.4f | objective %.6g -> %.6g | %zu "
                "iterations (%s)",
                before.success ? "success" : "fail", after.success ? "success" : "fail",
                before.mean_reward, after.mean_reward, f0, f1, trace.steps.size(),
                trace.stop_reason.c_str());
  std::cout << buf << "\n";
  return trace.aborted ? kExitFailure : kExitOk;
}

template <typename Fn>
int Guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const io::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const io::FormatError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const SchemaMismatchError& e) {
    std::cerr << "schema mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajfuse: multimodal trajectory prediction and skill optimization"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--kind", gen.kind, "skill kind")
      ->required()
      ->check(CLI::IsMember({"grasp", "reach"}));
  gen_cmd->add_option("--n", gen.n, "number of records")->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen.out, "output dataset path")->required();
  gen_cmd->add_flag("--with-force", gen.with_force, "add fx, fy force channels (grasp)");
  gen_cmd->add_option("--image-size", gen.image_size, "rendered image side in pixels")
      ->check(CLI::Range(16, 256));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", train.config, "run config (TOML)")->required();
  train_cmd->add_option("--data", train.data, "training dataset")->required();
  train_cmd->add_option("--out", train.out, "output directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "dataset")->required();

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "predict one record");
  predict_cmd->add_option("--ckpt", pr.ckpt, "checkpoint")->required();
  predict_cmd->add_option("--data", pr.data, "dataset")->required();
  predict_cmd->add_option("--index", pr.index, "record index")->required();
  predict_cmd->add_option("--out", pr.out, "output directory")->required();

  OptimizeArgs op;
  auto* opt_cmd = app.add_subcommand("optimize", "optimize skill parameters through a model");
  opt_cmd->add_option("--ckpt", op.ckpt, "checkpoint")->required();
  opt_cmd->add_option("--env-seed", op.env_seed, "environment seed")->required();
  opt_cmd->add_option("--init-params", op.init_params,
                      "comma-separated initial parameters (default: random in bounds)");
  opt_cmd->add_option("--init-seed", op.init_seed, "seed for random initial parameters");
  opt_cmd->add_option("--objective", op.objective, "objective")
      ->required()
      ->check(CLI::IsMember({"reward", "success", "force-limit", "target-pose"}));
  opt_cmd->add_option("--out", op.out, "output directory")->required();
  opt_cmd->add_option("--config", op.config, "run config providing [optimize] settings");
  opt_cmd->add_option("--lr", op.lr, "step size");
  opt_cmd->add_option("--max-iters", op.max_iters, "iteration limit");
  opt_cmd->add_option("--target", op.target, "target pose x,y (target-pose)");
  opt_cmd->add_option("--force-limit", op.force_limit, "force limit (force-limit)");
  opt_cmd->add_option("--image-size", op.image_size, "rendered image side in pixels")
      ->check(CLI::Range(16, 256));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : app.get_subcommands()) sub = s;
    std::cerr << (sub != nullptr ? sub->help() : app.help());
    return kExitUsage;
  }

  if (*gen_cmd) return Guarded([&] { return RunGenData(gen); });
  if (*train_cmd) return Guarded([&] { return RunTrain(train); });
  if (*eval_cmd) return Guarded([&] { return RunEval(ev); });
  if (*predict_cmd) return Guarded([&] { return RunPredict(pr); });
  if (*opt_cmd) return Guarded([&] { return RunOptimize(op); });
  return kExitUsage;
}
