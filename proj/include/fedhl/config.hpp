// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fedhl/aggregation.hpp"
#include "fedhl/errors.hpp"
#include "fedhl/orchestrator.hpp"
#include "fedhl/task.hpp"

namespace fedhl {

// Experiment configuration as a JSON document. Only `problem.d`,
// `problem.k`, `problem.n_clients`, `ranks` and `rounds` are required;
// everything else has a default. Unknown keys are rejected.
//
//   {
//     "seed": 0, "rounds": 40, "ranks": [32, 24, ...],
//     "strategy": "fedhl", "client_mode": "factored",
//     "participation_rate": 1.0, "init_scale": 0.01, "lora_alpha": null,
//     "problem": {"d": 32, "k": 32, "target_rank": 8, "n_clients": 10,
//                 "samples_per_client": 200, "hetero_sigma": 0.0,
//                 "grad_noise_sigma": 0.0, "noise_mode": "additive",
//                 "shared_design": false},
//     "train": {"local_steps": 3, "learning_rate": 0.05, "batch_size": 1,
//               "lr_schedule": "constant", "lr_decay": 1.0},
//     "weight_policy": {"kind": "auto", "epsilon": 1e-8,
//                       "softmax_temperature": 1.0,
//                       "error_power": "squared_norm", "sample_weighted": false}
//   }

inline constexpr std::size_t kDefaultSamplesPerClient = 100;

namespace detail {

using json = nlohmann::json;

inline std::string join_path(std::string_view parent, std::string_view key) {
  return parent.empty() ? std::string(key) : std::string(parent) + "." + std::string(key);
}

inline void reject_unknown(const json& obj, std::string_view path,
                           std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(join_path(path, key), "unknown key");
    }
  }
}

inline const json& require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  return j;
}

inline std::uint64_t as_unsigned(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw ConfigError(path, "expected a non-negative integer");
}

inline double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

inline bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
  return j.get<bool>();
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

inline std::vector<std::size_t> as_size_list(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(as_unsigned(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

template <typename Fn>
void if_present(const json& obj, const char* key, const std::string& path, Fn&& fn) {
  if (auto it = obj.find(key); it != obj.end()) fn(*it, join_path(path, key));
}

inline const json& required(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(join_path(path, key), "missing required key");
  return *it;
}

inline std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

inline std::string_view to_string(NoiseMode m) {
  return m == NoiseMode::additive ? "additive" : "minibatch";
}
inline std::string_view to_string(ClientMode m) {
  return m == ClientMode::factored ? "factored" : "w_space";
}
inline std::string_view to_string(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "theorem";
}
inline std::string_view to_string(ErrorPower p) {
  return p == ErrorPower::squared_norm ? "squared_norm" : "fourth_power";
}

template <typename Enum>
Enum parse_enum(const json& j, const std::string& path, std::initializer_list<Enum> options) {
  const std::string name = as_string(j, path);
  for (Enum e : options)
    if (to_string(e) == name) return e;
  std::string msg = "unknown value '" + name + "', expected one of:";
  for (Enum e : options) msg += " " + std::string(to_string(e));
  throw ConfigError(path, msg);
}

}  // namespace detail

inline ExperimentConfig parse_config(std::string_view text) {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("", e.what(), detail::line_of(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  detail::require_object(doc, "<root>");
  detail::reject_unknown(doc, "",
                         {"seed", "rounds", "ranks", "strategy", "client_mode",
                          "participation_rate", "init_scale", "lora_alpha", "problem", "train",
                          "weight_policy"});

  ExperimentConfig cfg;

  // problem
  const json& pj = detail::require_object(detail::required(doc, "problem", ""), "problem");
  detail::reject_unknown(pj, "problem",
                         {"d", "k", "target_rank", "n_clients", "samples_per_client",
                          "hetero_sigma", "grad_noise_sigma", "noise_mode", "shared_design"});
  ProblemSpec& ps = cfg.problem;
  ps.d = detail::as_unsigned(detail::required(pj, "d", "problem"), "problem.d");
  ps.k = detail::as_unsigned(detail::required(pj, "k", "problem"), "problem.k");
  ps.n_clients =
      detail::as_unsigned(detail::required(pj, "n_clients", "problem"), "problem.n_clients");
  ps.target_rank = std::max<std::size_t>(std::min(ps.d, ps.k), 1);
  ps.samples_per_client.assign(ps.n_clients, kDefaultSamplesPerClient);
  detail::if_present(pj, "target_rank", "problem", [&](const json& v, const std::string& p) {
    ps.target_rank = detail::as_unsigned(v, p);
  });
  detail::if_present(pj, "samples_per_client", "problem", [&](const json& v, const std::string& p) {
    if (v.is_array()) {
      ps.samples_per_client = detail::as_size_list(v, p);
    } else {
      ps.samples_per_client.assign(ps.n_clients, detail::as_unsigned(v, p));
    }
  });
  detail::if_present(pj, "hetero_sigma", "problem", [&](const json& v, const std::string& p) {
    ps.hetero_sigma = detail::as_double(v, p);
  });
  detail::if_present(pj, "grad_noise_sigma", "problem", [&](const json& v, const std::string& p) {
    ps.grad_noise_sigma = detail::as_double(v, p);
  });
  detail::if_present(pj, "noise_mode", "problem", [&](const json& v, const std::string& p) {
    ps.noise_mode = detail::parse_enum(v, p, {NoiseMode::additive, NoiseMode::minibatch});
  });
  detail::if_present(pj, "shared_design", "problem", [&](const json& v, const std::string& p) {
    ps.shared_design = detail::as_bool(v, p);
  });

  // top level
  cfg.rounds = detail::as_unsigned(detail::required(doc, "rounds", ""), "rounds");
  cfg.ranks = detail::as_size_list(detail::required(doc, "ranks", ""), "ranks");
  detail::if_present(doc, "seed", "", [&](const json& v, const std::string& p) {
    cfg.master_seed = detail::as_unsigned(v, p);
  });
  cfg.problem.master_seed = cfg.master_seed;
  detail::if_present(doc, "strategy", "", [&](const json& v, const std::string& p) {
    cfg.strategy = detail::parse_enum(
        v, p,
        {AggregationStrategy::zero_padding, AggregationStrategy::truncated_baseline,
         AggregationStrategy::joint, AggregationStrategy::fedhl});
  });
  detail::if_present(doc, "client_mode", "", [&](const json& v, const std::string& p) {
    cfg.client_mode = detail::parse_enum(v, p, {ClientMode::factored, ClientMode::w_space});
  });
  detail::if_present(doc, "participation_rate", "", [&](const json& v, const std::string& p) {
    cfg.participation_rate = detail::as_double(v, p);
  });
  detail::if_present(doc, "init_scale", "", [&](const json& v, const std::string& p) {
    cfg.init_scale = detail::as_double(v, p);
  });
  detail::if_present(doc, "lora_alpha", "", [&](const json& v, const std::string& p) {
    if (!v.is_null()) cfg.lora_alpha = detail::as_double(v, p);
  });

  // train
  detail::if_present(doc, "train", "", [&](const json& tj, const std::string& path) {
    detail::require_object(tj, path);
    detail::reject_unknown(tj, path,
                           {"local_steps", "learning_rate", "batch_size", "lr_schedule", "lr_decay"});
    detail::if_present(tj, "local_steps", path, [&](const json& v, const std::string& p) {
      cfg.train.local_steps = detail::as_unsigned(v, p);
    });
    detail::if_present(tj, "learning_rate", path, [&](const json& v, const std::string& p) {
      cfg.train.learning_rate = detail::as_double(v, p);
    });
    detail::if_present(tj, "batch_size", path, [&](const json& v, const std::string& p) {
      cfg.train.batch_size = detail::as_unsigned(v, p);
    });
    detail::if_present(tj, "lr_schedule", path, [&](const json& v, const std::string& p) {
      cfg.lr_schedule = detail::parse_enum(v, p, {LrSchedule::constant, LrSchedule::theorem});
    });
    detail::if_present(tj, "lr_decay", path, [&](const json& v, const std::string& p) {
      cfg.lr_decay = detail::as_double(v, p);
    });
  });

  // weight policy
  detail::if_present(doc, "weight_policy", "", [&](const json& wj, const std::string& path) {
    detail::require_object(wj, path);
    detail::reject_unknown(wj, path,
                           {"kind", "epsilon", "softmax_temperature", "error_power",
                            "sample_weighted"});
    WeightPolicy& wp = cfg.weight_policy;
    detail::if_present(wj, "kind", path, [&](const json& v, const std::string& p) {
      const auto kind = parse_weight_kind(detail::as_string(v, p));
      if (!kind) {
        throw ConfigError(p, "unknown value, expected one of: auto fedavg uniform fedhl_optimal");
      }
      wp.kind = *kind;
    });
    detail::if_present(wj, "epsilon", path, [&](const json& v, const std::string& p) {
      wp.epsilon = detail::as_double(v, p);
    });
    detail::if_present(wj, "softmax_temperature", path, [&](const json& v, const std::string& p) {
      if (v.is_null()) {
        wp.softmax_temperature.reset();
      } else {
        wp.softmax_temperature = detail::as_double(v, p);
      }
    });
    detail::if_present(wj, "error_power", path, [&](const json& v, const std::string& p) {
      wp.error_power =
          detail::parse_enum(v, p, {ErrorPower::squared_norm, ErrorPower::fourth_power});
    });
    detail::if_present(wj, "sample_weighted", path, [&](const json& v, const std::string& p) {
      wp.sample_weighted = detail::as_bool(v, p);
    });
  });

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Full document with every default spelled out; parse_config reads it back
/// to an equal config.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  using ojson = nlohmann::ordered_json;
  ojson problem = {
      {"d", cfg.problem.d},
      {"k", cfg.problem.k},
      {"target_rank", cfg.problem.target_rank},
      {"n_clients", cfg.problem.n_clients},
      {"samples_per_client", cfg.problem.samples_per_client},
      {"hetero_sigma", cfg.problem.hetero_sigma},
      {"grad_noise_sigma", cfg.problem.grad_noise_sigma},
      {"noise_mode", detail::to_string(cfg.problem.noise_mode)},
      {"shared_design", cfg.problem.shared_design},
  };
  ojson train = {
      {"local_steps", cfg.train.local_steps},
      {"learning_rate", cfg.train.learning_rate},
      {"batch_size", cfg.train.batch_size},
      {"lr_schedule", detail::to_string(cfg.lr_schedule)},
      {"lr_decay", cfg.lr_decay},
  };
  ojson policy = {
      {"kind", to_string(cfg.weight_policy.kind)},
      {"epsilon", cfg.weight_policy.epsilon},
      {"softmax_temperature", cfg.weight_policy.softmax_temperature
                                  ? ojson(*cfg.weight_policy.softmax_temperature)
                                  : ojson(nullptr)},
      {"error_power", detail::to_string(cfg.weight_policy.error_power)},
      {"sample_weighted", cfg.weight_policy.sample_weighted},
  };
  ojson doc = {
      {"seed", cfg.master_seed},
      {"rounds", cfg.rounds},
      {"ranks", cfg.ranks},
      {"strategy", to_string(cfg.strategy)},
      {"client_mode", detail::to_string(cfg.client_mode)},
      {"participation_rate", cfg.participation_rate},
      {"init_scale", cfg.init_scale},
      {"lora_alpha", cfg.lora_alpha ? ojson(*cfg.lora_alpha) : ojson(nullptr)},
      {"problem", std::move(problem)},
      {"train", std::move(train)},
      {"weight_policy", std::move(policy)},
  };
  return doc.dump(2) + "\n";
}

}  // namespace fedhl
