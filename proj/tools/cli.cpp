// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "moeplan/moeplan.hpp"

namespace moeplan::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string model;
  std::string preset;
  std::string profile;
  std::string hardware_preset;
  std::string out = ".";
  std::optional<std::int64_t> prompt_len, decode_len, num_sequences;
  std::string phase;
  std::string plan_path;
  std::string routing;
  std::optional<double> concentration;
  std::optional<std::uint64_t> seed;
  bool trace = false;
  bool baseline = false;
  bool simulate = false;
  std::string variable;
  std::string grid;
  std::optional<double> gpu_kv_capacity;
  std::string components;
  std::optional<double> throughput;
  std::string format = "both";
  bool layer_only = false;
  std::optional<std::int64_t> B, b_a, b_e, s_expert, s_params;
  std::optional<double> omega;
};

struct Context {
  ModelSpec model;
  Profile profile;
  WorkloadSpec workload;
  std::vector<Phase> phases;
  bool phase_given = false;
  SearchSpace space;
  RoutingModel routing;
  fs::path out;
};

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("grid value '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("grid is empty");
  return out;
}

template <typename T>
void take(const json& cfg, const char* key, std::optional<T>& dst) {
  if (!dst && cfg.contains(key)) dst = cfg[key].get<T>();
}

void take(const json& cfg, const char* key, std::string& dst) {
  if (dst.empty() && cfg.contains(key) && cfg[key].is_string()) dst = cfg[key].get<std::string>();
}

Context resolve(Options& o) {
  json cfg = json::object();
  fs::path base = fs::current_path();
  if (!o.config.empty()) {
    cfg = read_json(o.config);
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    base = fs::absolute(o.config).parent_path();
  }
  auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  Context ctx;
  // Model.
  if (!o.model.empty()) {
    ctx.model = load_model_spec(read_json(o.model));
  } else if (!o.preset.empty()) {
    ctx.model = preset(o.preset);
  } else if (cfg.contains("model") && cfg["model"].is_object()) {
    ctx.model = load_model_spec(cfg["model"]);
  } else if (cfg.contains("model") && cfg["model"].is_string()) {
    ctx.model = load_model_spec(read_json(rel(cfg["model"].get<std::string>())));
  } else if (cfg.contains("preset")) {
    ctx.model = preset(cfg["preset"].get<std::string>());
  } else {
    throw ConfigError("no model given (use --model or --preset)");
  }
  // Hardware.
  json profile_doc;
  if (!o.profile.empty()) {
    profile_doc = read_json(o.profile);
  } else if (!o.hardware_preset.empty()) {
    profile_doc = json{{"hardware", to_json(hardware_preset(o.hardware_preset))}};
  } else if (cfg.contains("profile") && cfg["profile"].is_object()) {
    profile_doc = cfg["profile"];
  } else if (cfg.contains("profile") && cfg["profile"].is_string()) {
    profile_doc = read_json(rel(cfg["profile"].get<std::string>()));
  } else if (cfg.contains("hardware_preset")) {
    profile_doc = json{{"hardware", to_json(hardware_preset(cfg["hardware_preset"].get<std::string>()))}};
  } else {
    throw ConfigError("no hardware given (use --profile or --hardware-preset)");
  }
  ctx.profile = ingest_profile(profile_doc);
  if (ctx.profile.tables.empty()) ctx.profile.tables = synth_profile(ctx.profile.hardware, ctx.model);

  const json wl = cfg.value("workload", json::object());
  take(wl, "prompt_len", o.prompt_len);
  take(wl, "decode_len", o.decode_len);
  take(wl, "num_sequences", o.num_sequences);
  ctx.workload.prompt_len = o.prompt_len.value_or(512);
  ctx.workload.decode_len = o.decode_len.value_or(256);
  ctx.workload.num_sequences = o.num_sequences.value_or(1);
  validate_workload(ctx.workload);

  take(cfg, "phase", o.phase);
  ctx.phase_given = !o.phase.empty();
  if (o.phase.empty() || o.phase == "decode") {
    ctx.phases = {Phase::kDecode};
  } else if (o.phase == "prefill") {
    ctx.phases = {Phase::kPrefill};
  } else if (o.phase == "both") {
    ctx.phases = {Phase::kPrefill, Phase::kDecode};
  } else {
    throw ConfigError("phase must be prefill, decode or both");
  }
  ctx.workload.phase = ctx.phases.back();

  ctx.space = search_space_from_json(cfg.value("search_space", json()));

  const json routing = cfg.value("routing", json::object());
  take(routing, "mode", o.routing);
  take(routing, "concentration", o.concentration);
  take(routing, "seed", o.seed);
  ctx.routing.mode = parse_routing_mode(o.routing.empty() ? "even" : o.routing);
  ctx.routing.concentration = o.concentration.value_or(1.0);
  ctx.routing.seed = o.seed.value_or(0);
  if (const char* env = std::getenv("MOE_PLANNER_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0') throw ConfigError("MOE_PLANNER_SEED must be an unsigned integer");
    ctx.routing.seed = v;
  }
  if (!(ctx.routing.concentration > 0.0)) throw ConfigError("concentration must be > 0");

  if (o.out == "." && cfg.contains("out")) o.out = cfg["out"].get<std::string>();
  ctx.out = o.out;

  for (const char* key : {"plan_path", "components"}) {
    std::string& dst = std::string_view(key) == "plan_path" ? o.plan_path : o.components;
    if (dst.empty() && cfg.contains(key) && cfg[key].is_string()) dst = rel(cfg[key].get<std::string>()).string();
  }
  take(cfg, "gpu_kv_capacity", o.gpu_kv_capacity);
  return ctx;
}

std::string summary(const PlanEvaluation& e) {
  return std::string(phase_name(e.phase)) + ": throughput=" + fmt(e.throughput) +
         " tokens/s B=" + std::to_string(e.plan.B) + " b_a=" + std::to_string(e.plan.b_a) +
         " b_e=" + std::to_string(e.plan.b_e) + " omega=" + fmt(e.plan.omega) +
         " t_forward=" + fmt(e.t_forward) + " s";
}

// Loads a plan from --plan (evaluation object, array of them, or a bare plan)
// and applies field overrides. Returns the phase recorded with it, if any.
std::optional<Phase> load_plan(const Options& o, const Context& ctx, BatchingPlan& plan) {
  std::optional<Phase> phase;
  if (!o.plan_path.empty()) {
    json doc = read_json(o.plan_path);
    try {
      if (doc.is_array()) {
        if (doc.empty()) throw ConfigError("plan file holds an empty array");
        json pick = doc.front();
        for (const json& item : doc) {
          if (ctx.phase_given && item.contains("phase") &&
              item["phase"] == std::string(phase_name(ctx.phases.back()))) {
            pick = item;
          }
        }
        doc = pick;
      }
      if (doc.contains("plan")) {
        const PlanEvaluation e = evaluation_from_json(doc);
        plan = e.plan;
        if (doc.contains("phase")) phase = e.phase;
      } else {
        plan = plan_from_json(doc);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed plan: ") + e.what());
    }
  } else if (!o.B) {
    throw ConfigError("no plan given (use --plan or --B/--b-a/--b-e/--omega/--s-expert/--s-params)");
  } else {
    plan.s_expert = 2 * ctx.model.expert_bytes;
  }
  if (o.B) plan.B = *o.B;
  if (o.b_a) plan.b_a = *o.b_a;
  if (o.b_e) plan.b_e = *o.b_e;
  if (o.omega) plan.omega = *o.omega;
  if (o.s_expert) plan.s_expert = *o.s_expert;
  if (o.s_params) plan.s_params = *o.s_params;
  return phase;
}

Phase plan_phase(const Context& ctx, std::optional<Phase> recorded) {
  if (ctx.phase_given || !recorded) return ctx.phases.back();
  return *recorded;
}

int cmd_plan(Options& o, std::ostream& out) {
  Context ctx = resolve(o);
  json doc = json::array();
  for (Phase ph : ctx.phases) {
    const PlanEvaluation e =
        o.baseline ? model_based_baseline(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, ph, ctx.space)
                   : search(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, ctx.space, ph);
    doc.push_back(to_json(e));
    out << summary(e) << '\n';
  }
  write_file(ctx.out / "plan.json", (doc.size() == 1 ? doc[0] : doc).dump(2) + "\n");
  return kExitOk;
}

int cmd_eval(Options& o, std::ostream& out) {
  Context ctx = resolve(o);
  BatchingPlan plan;
  const Phase ph = plan_phase(ctx, load_plan(o, ctx, plan));
  const PlanEvaluation e = evaluate_plan(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, plan, ph);
  write_file(ctx.out / "eval.json", to_json(e).dump(2) + "\n");
  out << summary(e) << (e.feasible ? "" : " (infeasible: " + e.reason + ")") << '\n';
  return e.feasible ? kExitOk : kExitNoPlan;
}

int cmd_simulate(Options& o, std::ostream& out) {
  Context ctx = resolve(o);
  BatchingPlan plan;
  const Phase ph = plan_phase(ctx, load_plan(o, ctx, plan));
  try {
    validate_plan(ctx.model, plan);
  } catch (const Error& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  }
  std::vector<TraceEvent> trace;
  const SimReport rep = simulate_plan(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, plan,
                                      ctx.routing, ph, o.trace ? &trace : nullptr);
  json doc = to_json(rep);
  doc["phase"] = phase_name(ph);
  doc["plan"] = to_json(plan);
  doc["routing"] = {{"mode", routing_mode_name(ctx.routing.mode)},
                    {"concentration", ctx.routing.concentration},
                    {"seed", ctx.routing.seed}};
  write_file(ctx.out / "sim_report.json", doc.dump(2) + "\n");
  if (o.trace) {
    std::ostringstream os;
    write_trace(os, trace);
    write_file(ctx.out / "trace.jsonl", os.str());
  }
  out << phase_name(ph) << ": makespan=" << fmt(rep.makespan) << " s throughput=" << fmt(rep.throughput)
      << " tokens/s oom=" << (rep.oom ? "true" : "false") << '\n';
  return kExitOk;
}

BatchingPlan plan_for_traffic(Options& o, const Context& ctx) {
  BatchingPlan plan;
  if (!o.plan_path.empty() || o.B) {
    load_plan(o, ctx, plan);
  } else {
    plan = search(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, ctx.space, Phase::kDecode).plan;
  }
  return plan;
}

std::vector<TrafficRow> traffic_rows(const Context& ctx, const BatchingPlan& plan, Bytes capacity,
                                     const std::vector<std::int64_t>& sizes) {
  std::vector<TrafficRow> rows;
  for (std::int64_t n : sizes) {
    WorkloadSpec w = ctx.workload;
    w.num_sequences = n;
    for (const TrafficPolicy& p : {TrafficPolicy::full_offload(), TrafficPolicy::gpu_cache(capacity)}) {
      rows.push_back({n, p.name(), dataset_traffic(ctx.model, ctx.profile.hardware, w, p, plan).total()});
    }
  }
  return rows;
}

std::vector<std::int64_t> dataset_sizes(const Options& o, const BatchingPlan& plan) {
  std::vector<std::int64_t> sizes;
  if (!o.grid.empty()) {
    for (double v : parse_grid(o.grid)) {
      if (v < 1 || v != std::floor(v)) throw ConfigError("num_sequences grid values must be positive integers");
      sizes.push_back(static_cast<std::int64_t>(v));
    }
    return sizes;
  }
  for (std::int64_t n = 1; n <= 64 * plan.B; n *= 2) sizes.push_back(n);
  return sizes;
}

Bytes kv_capacity(const Options& o) {
  const double cap = o.gpu_kv_capacity.value_or(4e9);
  if (!(cap > 0)) throw ConfigError("gpu-kv-capacity must be > 0");
  return static_cast<Bytes>(cap);
}

int cmd_traffic(Options& o, std::ostream& out) {
  Context ctx = resolve(o);
  const BatchingPlan plan = plan_for_traffic(o, ctx);
  const auto rows = traffic_rows(ctx, plan, kv_capacity(o), dataset_sizes(o, plan));
  std::ostringstream os;
  write_traffic_csv(os, rows);
  write_file(ctx.out / "traffic.csv", os.str());
  out << "traffic: " << rows.size() << " rows, B=" << plan.B << '\n';
  return kExitOk;
}

int cmd_sweep(Options& o, std::ostream& out) {
  static const std::vector<std::string> kVariables = {"omega", "b_a", "b_e", "s_params", "num_sequences"};
  if (std::find(kVariables.begin(), kVariables.end(), o.variable) == kVariables.end()) {
    throw ConfigError("unknown sweep variable '" + o.variable + "' (omega, b_a, b_e, s_params, num_sequences)");
  }
  Context ctx = resolve(o);
  std::ostringstream os;
  if (o.variable == "num_sequences") {
    const BatchingPlan plan = plan_for_traffic(o, ctx);
    write_traffic_csv(os, traffic_rows(ctx, plan, kv_capacity(o), dataset_sizes(o, plan)));
    write_file(ctx.out / "sweep.csv", os.str());
    out << "sweep num_sequences: B=" << plan.B << '\n';
    return kExitOk;
  }
  std::vector<double> grid;
  if (!o.grid.empty()) {
    grid = parse_grid(o.grid);
  } else if (o.variable == "omega") {
    grid = ctx.space.omega;
  } else if (o.variable == "b_a") {
    for (auto v : ctx.space.b_a) grid.push_back(static_cast<double>(v));
  } else if (o.variable == "b_e") {
    for (auto v : ctx.space.b_e) grid.push_back(static_cast<double>(v));
  } else {
    grid = ctx.space.s_params_fractions;
  }
  const Phase ph = ctx.phases.back();
  os << "variable,value,phase,feasible,throughput,t_forward,B,b_a,b_e,omega,s_expert,s_params";
  if (o.simulate) os << ",sim_makespan";
  os << '\n';
  double best = -1.0, best_value = 0.0;
  for (double v : grid) {
    SearchSpace s = ctx.space;
    if (o.variable == "omega") s.omega = {v};
    if (o.variable == "b_a") s.b_a = {static_cast<std::int64_t>(v)};
    if (o.variable == "b_e") s.b_e = {static_cast<std::int64_t>(v)};
    if (o.variable == "s_params") s.s_params_fractions = {v};
    std::optional<PlanEvaluation> e;
    try {
      s.validate();
    } catch (const Error& err) {
      throw ConfigError(err.what());
    }
    try {
      e = search(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, s, ph);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::kEmptySearchSpace && err.code() != ErrorCode::kNoFeasibleB) throw;
    }
    os << o.variable << ',' << fmt(v) << ',' << phase_name(ph) << ',';
    if (!e) {
      os << "false,0,0,0,0,0,0,0,0";
      if (o.simulate) os << ",0";
      os << '\n';
      continue;
    }
    const BatchingPlan& p = e->plan;
    os << "true," << fmt(e->throughput) << ',' << fmt(e->t_forward) << ',' << p.B << ',' << p.b_a << ','
       << p.b_e << ',' << fmt(p.omega) << ',' << p.s_expert << ',' << p.s_params;
    if (o.simulate) {
      const SimReport rep = simulate_plan(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, p,
                                          ctx.routing, ph);
      os << ',' << fmt(rep.makespan);
    }
    os << '\n';
    if (e->throughput > best) {
      best = e->throughput;
      best_value = v;
    }
  }
  write_file(ctx.out / "sweep.csv", os.str());
  out << "sweep " << o.variable << ": best " << fmt(best_value) << " throughput=" << fmt(std::max(best, 0.0))
      << " tokens/s\n";
  return kExitOk;
}

int cmd_cost(Options& o, std::ostream& out) {
  std::vector<Component> components;
  double throughput = o.throughput.value_or(0.0);
  if (!o.components.empty() && o.config.empty() && o.model.empty() && o.preset.empty()) {
    components = components_from_json(read_json(o.components));
    if (!o.plan_path.empty() && !o.throughput) {
      const json doc = read_json(o.plan_path);
      throughput = (doc.is_array() ? doc.front() : doc).value("throughput", 0.0);
    }
  } else {
    Context ctx = resolve(o);
    components = o.components.empty() ? ctx.profile.hardware.components
                                      : components_from_json(read_json(o.components));
    if (!o.plan_path.empty() && !o.throughput) {
      const json doc = read_json(o.plan_path);
      throughput = (doc.is_array() ? doc.front() : doc).value("throughput", 0.0);
    }
    o.out = ctx.out.string();
  }
  const CostReport r = cost_report(components, throughput);
  write_file(fs::path(o.out) / "cost.json", to_json(r).dump(2) + "\n");
  out << "cost: " << fmt(r.total_power) << " W, " << fmt(r.total_price) << " price units\n";
  return kExitOk;
}

int cmd_dag_export(Options& o, std::ostream& out) {
  if (o.format != "dot" && o.format != "json" && o.format != "both") {
    throw ConfigError("format must be dot, json or both");
  }
  Context ctx = resolve(o);
  BatchingPlan plan;
  std::optional<Phase> recorded;
  if (!o.plan_path.empty() || o.B) {
    recorded = load_plan(o, ctx, plan);
  } else {
    plan = search(ctx.model, ctx.profile.hardware, ctx.profile.tables, ctx.workload, ctx.space, ctx.phases.back()).plan;
  }
  const Phase ph = plan_phase(ctx, recorded);
  const auto& hw = ctx.profile.hardware;
  const Dag dag = o.layer_only
                      ? serialize_resources(build_layer_dag(ctx.model, hw, ctx.profile.tables, ctx.workload, plan, ph))
                      : build_forward_dag(ctx.model, hw, ctx.profile.tables, ctx.workload, plan, ph);
  if (o.format != "json") write_file(ctx.out / "dag.dot", export_dot(dag));
  if (o.format != "dot") write_file(ctx.out / "dag.json", to_json(dag).dump(2) + "\n");
  out << "dag: " << dag.nodes.size() << " nodes, " << dag.edges.size() << " edges\n";
  return kExitOk;
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--model", o.model, "model spec document");
  app->add_option("--preset", o.preset, "built-in model preset");
  app->add_option("--profile", o.profile, "hardware/profiling document");
  app->add_option("--hardware-preset", o.hardware_preset, "built-in hardware preset");
  app->add_option("--prompt-len", o.prompt_len);
  app->add_option("--decode-len", o.decode_len);
  app->add_option("--num-sequences", o.num_sequences);
  app->add_option("--phase", o.phase, "prefill, decode or both");
  app->add_option("--out", o.out, "output directory");
}

void add_plan_fields(CLI::App* app, Options& o) {
  app->add_option("--plan", o.plan_path, "plan.json");
  app->add_option("--B", o.B);
  app->add_option("--b-a", o.b_a);
  app->add_option("--b-e", o.b_e);
  app->add_option("--omega", o.omega);
  app->add_option("--s-expert", o.s_expert);
  app->add_option("--s-params", o.s_params);
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoFeasibleB:
    case ErrorCode::kEmptySearchSpace:
    case ErrorCode::kInfeasiblePlan: return kExitNoPlan;
    case ErrorCode::kMissingField:
    case ErrorCode::kNonPositiveValue:
    case ErrorCode::kTopKExceedsExperts:
    case ErrorCode::kUnknownPreset:
    case ErrorCode::kSchemaError:
    case ErrorCode::kNonMonotoneLatency:
    case ErrorCode::kUnknownModuleKind:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInfeasiblePolicy: return kExitConfig;
    default: return kExitFailure;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Batching-strategy planner and simulator for offloaded MoE inference", "moeplan"};
  app.require_subcommand(1);
  auto* plan = app.add_subcommand("plan", "search the best batching plan");
  add_common(plan, o);
  plan->add_flag("--baseline", o.baseline, "restrict to a single unified batch");
  auto* eval = app.add_subcommand("eval", "evaluate one plan with the critical-path estimator");
  add_common(eval, o);
  add_plan_fields(eval, o);
  auto* simulate = app.add_subcommand("simulate", "run the discrete-event simulator on a plan");
  add_common(simulate, o);
  add_plan_fields(simulate, o);
  simulate->add_option("--routing", o.routing, "even or sampled");
  simulate->add_option("--concentration", o.concentration);
  simulate->add_option("--seed", o.seed);
  simulate->add_flag("--trace", o.trace, "write trace.jsonl");
  auto* sweep = app.add_subcommand("sweep", "search across one variable");
  add_common(sweep, o);
  add_plan_fields(sweep, o);
  sweep->add_option("--variable", o.variable)->required();
  sweep->add_option("--grid", o.grid, "comma-separated values");
  sweep->add_option("--gpu-kv-capacity", o.gpu_kv_capacity);
  sweep->add_option("--routing", o.routing);
  sweep->add_option("--concentration", o.concentration);
  sweep->add_option("--seed", o.seed);
  sweep->add_flag("--simulate", o.simulate, "also simulate each point");
  auto* traffic = app.add_subcommand("traffic", "dataset fetching traffic under both KV policies");
  add_common(traffic, o);
  add_plan_fields(traffic, o);
  traffic->add_option("--grid", o.grid, "dataset sizes");
  traffic->add_option("--gpu-kv-capacity", o.gpu_kv_capacity);
  auto* cost = app.add_subcommand("cost", "power and price report");
  add_common(cost, o);
  cost->add_option("--components", o.components, "component list JSON");
  cost->add_option("--throughput", o.throughput);
  cost->add_option("--plan", o.plan_path);
  auto* dag = app.add_subcommand("dag", "graph utilities");
  dag->require_subcommand(1);
  auto* dag_export = dag->add_subcommand("export", "write the forward DAG as DOT and JSON");
  add_common(dag_export, o);
  add_plan_fields(dag_export, o);
  dag_export->add_option("--format", o.format, "dot, json or both");
  dag_export->add_flag("--layer-only", o.layer_only);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "moeplan: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (plan->parsed()) return cmd_plan(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
    if (traffic->parsed()) return cmd_traffic(o, out);
    if (cost->parsed()) return cmd_cost(o, out);
    if (dag_export->parsed()) return cmd_dag_export(o, out);
  } catch (const ConfigError& e) {
    err << "moeplan: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "moeplan: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "moeplan: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "moeplan: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace moeplan::cli
