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


#include "trajfuse/run_config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "trajfuse/binary_io.h"

namespace trajfuse {
namespace {

using Setter = std::function<void(const std::string&)>;

std::size_t ParseSize(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double ParseDouble(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::map<std::string, Setter> Setters(RunConfig& c) {
  std::map<std::string, Setter> s;
  auto size = [&s](const std::string& key, std::size_t* dst) {
    s[key] = [key, dst](const std::string& v) { *dst = ParseSize(key, v); };
  };
  auto real = [&s](const std::string& key, double* dst) {
    s[key] = [key, dst](const std::string& v) { *dst = ParseDouble(key, v); };
  };
  s["kind"] = [&c](const std::string& v) {
    const auto k = ParseSkillKind(v);
    if (!k) throw ConfigError("kind: expected grasp or reach, got '" + v + "'");
    c.kind = *k;
  };
  s["with_force"] = [&c](const std::string& v) { c.with_force = ParseBool("with_force", v); };

  size("model.d_model", &c.model.d_model);
  size("model.n_enc_layers", &c.model.n_enc_layers);
  size("model.n_dec_layers", &c.model.n_dec_layers);
  size("model.n_heads", &c.model.n_heads);
  size("model.max_segments", &c.model.max_segments);
  size("model.pos_grid", &c.model.pos_grid);
  size("model.ffn_mult", &c.model.ffn_mult);

  size("train.batch_size", &c.train.batch_size);
  size("train.steps", &c.train.steps);
  real("train.lr", &c.train.lr);
  size("train.warmup_steps", &c.train.warmup_steps);
  real("train.clip_norm", &c.train.clip_norm);
  s["train.seed"] = [&c](const std::string& v) {
    c.train.seed = static_cast<std::uint64_t>(ParseSize("train.seed", v));
  };
  real("train.lambda_chan", &c.train.lambda_chan);
  real("train.lambda_flag", &c.train.lambda_flag);
  size("train.eval_interval", &c.train.eval_interval);
  size("train.eval_records", &c.train.eval_records);
  size("train.log_interval", &c.train.log_interval);

  s["optimize.objective"] = [&c](const std::string& v) {
    const auto k = ParseObjectiveKind(v);
    if (!k) throw ConfigError("optimize.objective: unknown objective '" + v + "'");
    c.objective.kind = *k;
  };
  size("optimize.max_iters", &c.optimize.max_iters);
  real("optimize.lr", &c.optimize.lr);
  real("optimize.momentum", &c.optimize.momentum);
  real("optimize.grad_tol", &c.optimize.grad_tol);
  real("optimize.improve_tol", &c.optimize.improve_tol);
  size("optimize.patience", &c.optimize.patience);
  real("optimize.r_max", &c.objective.r_max);
  real("optimize.force_limit", &c.objective.force_limit);
  real("optimize.success_coupling", &c.objective.success_coupling);
  real("optimize.target_x", &c.objective.target[0]);
  real("optimize.target_y", &c.objective.target[1]);
  s["optimize.dtype"] = [&c](const std::string& v) {
    if (v == "float32") {
      c.optimize.dtype = DType::kFloat32;
    } else if (v == "float64") {
      c.optimize.dtype = DType::kFloat64;
    } else {
      throw ConfigError("optimize.dtype: expected float32 or float64, got '" + v + "'");
    }
  };
  return s;
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ModelConfig RunConfig::ResolvedModel() const {
  ModelConfig m = model;
  WorldOptions opts;
  opts.with_force = with_force;
  m.schema = SkillSchema(kind, opts);
  m.param_dim = ParamDim(kind);
  m.Validate();
  return m;
}

RunConfig ParseRunConfig(std::istream& is) {
  RunConfig c;
  auto setters = Setters(c);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(is);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  for (const CLI::ConfigItem& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    std::string key;
    for (const std::string& p : item.parents) key += p + ".";
    key += item.name;
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    if (item.inputs.size() != 1) throw ConfigError(key + ": expected a single value");
    it->second(item.inputs[0]);
  }
  try {
    c.ResolvedModel();
    c.train.Validate();
    c.objective.Validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io::IoError("cannot open config " + path.string());
  try {
    return ParseRunConfig(is);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string ToToml(const RunConfig& c) {
  std::ostringstream os;
  os << "kind = \"" << SkillKindName(c.kind) << "\"\n";
  os << "with_force = " << (c.with_force ? "true" : "false") << "\n";
  os << "\n[model]\n";
  os << "d_model = " << c.model.d_model << "\n";
  os << "n_enc_layers = " << c.model.n_enc_layers << "\n";
  os << "n_dec_layers = " << c.model.n_dec_layers << "\n";
  os << "n_heads = " << c.model.n_heads << "\n";
  os << "max_segments = " << c.model.max_segments << "\n";
  os << "pos_grid = " << c.model.pos_grid << "\n";
  os << "ffn_mult = " << c.model.ffn_mult << "\n";
  os << "\n[train]\n";
  os << "batch_size = " << c.train.batch_size << "\n";
  os << "steps = " << c.train.steps << "\n";
  os << "lr = " << Num(c.train.lr) << "\n";
  os << "warmup_steps = " << c.train.warmup_steps << "\n";
  os << "clip_norm = " << Num(c.train.clip_norm) << "\n";
  os << "seed = " << c.train.seed << "\n";
  os << "lambda_chan = " << Num(c.train.lambda_chan) << "\n";
  os << "lambda_flag = " << Num(c.train.lambda_flag) << "\n";
  os << "eval_interval = " << c.train.eval_interval << "\n";
  os << "eval_records = " << c.train.eval_records << "\n";
  os << "log_interval = " << c.train.log_interval << "\n";
  os << "\n[optimize]\n";
  os << "objective = \"" << ObjectiveKindName(c.objective.kind) << "\"\n";
  os << "max_iters = " << c.optimize.max_iters << "\n";
  os << "lr = " << Num(c.optimize.lr) << "\n";
  os << "momentum = " << Num(c.optimize.momentum) << "\n";
  os << "grad_tol = " << Num(c.optimize.grad_tol) << "\n";
  os << "improve_tol = " << Num(c.optimize.improve_tol) << "\n";
  os << "patience = " << c.optimize.patience << "\n";
  os << "r_max = " << Num(c.objective.r_max) << "\n";
  os << "force_limit = " << Num(c.objective.force_limit) << "\n";
  os << "success_coupling = " << Num(c.objective.success_coupling) << "\n";
  os << "target_x = " << Num(c.objective.target[0]) << "\n";
  os << "target_y = " << Num(c.objective.target[1]) << "\n";
  os << "dtype = \"" << (c.optimize.dtype == DType::kFloat64 ? "float64" : "float32") << "\"\n";
  return os.str();
}

}  // namespace trajfuse
