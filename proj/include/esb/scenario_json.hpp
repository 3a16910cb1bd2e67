#pragma once

// JSON scenario files (schema validation with JSON-pointer error locations),
// built-in scenario definitions, CSV trace output and run summaries.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "esb/sim.hpp"
#include "json.hpp"

namespace esb {

using nlohmann::json;

struct ScenarioParseError : std::runtime_error {
  std::string pointer;
  ScenarioParseError(std::string ptr, const std::string& msg)
      : std::runtime_error(ptr + ": " + msg), pointer(std::move(ptr)) {}
};

// --- Declarative scenario document -------------------------------------------

struct TaskDoc {
  std::string id;
  std::string kind;  // goal_point | joint_limits | orientation | look_at_point
  json params;
  std::string gamma_kind = "linear";
  double gamma_gain = 1.0;
  bool safety_critical = false;

  bool operator==(const TaskDoc&) const = default;
};

struct StackDoc {
  std::vector<std::vector<std::string>> order;
  double kappa = 1e3;
  std::string mode = "fixed";

  bool operator==(const StackDoc&) const = default;
};

struct SegmentDoc {
  long until_iteration = 0;
  StackDoc stack;

  bool operator==(const SegmentDoc&) const = default;
};

struct ScenarioDoc {
  std::string name;
  std::vector<double> lengths;
  std::vector<double> masses;          // empty: unit masses
  std::optional<double> friction;
  std::vector<double> gravity;         // empty: no gravity
  std::vector<TaskDoc> tasks;
  std::vector<SegmentDoc> timeline;
  double switch_duration_s = 0.5;
  std::string switch_profile = "linear";
  std::string integrator_method = "euler";
  std::optional<double> dt;
  double l = 1e2, l_delta = 1e2, l_v = 1e2;
  bool dynamics_enabled = false;
  bool velocity_tracking = false;
  double u_max = 60.0;
  double gamma_u = 10.0;
  std::vector<double> initial_q;
  std::vector<double> initial_qdot;    // empty: zero
  double rank_tol = 5e-3;

  bool operator==(const ScenarioDoc&) const = default;
};

namespace detail_json {

[[noreturn]] inline void fail(const std::string& ptr, const std::string& msg) {
  throw ScenarioParseError(ptr.empty() ? "/" : ptr, msg);
}

inline void check_fields(const json& j, const std::string& ptr,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(ptr, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return it.key() == a;
        }) == allowed.end())
      fail(ptr + "/" + it.key(), "unknown field");
  }
}

template <typename T>
T get_req(const json& j, const std::string& ptr, const char* key) {
  if (!j.contains(key)) fail(ptr + "/" + key, "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ptr + "/" + key, e.what());
  }
}

template <typename T>
T get_opt(const json& j, const std::string& ptr, const char* key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ptr + "/" + key, e.what());
  }
}

inline void check_task_params(const TaskDoc& task, const std::string& ptr) {
  const json& p = task.params;
  if (task.kind == "goal_point") {
    check_fields(p, ptr, {"frame", "link", "target"});
    const auto frame = get_opt<std::string>(p, ptr, "frame", "link_point");
    if (frame != "link_point" && frame != "joint_vector")
      fail(ptr + "/frame", "expected link_point or joint_vector");
    if (frame == "link_point") get_req<int>(p, ptr, "link");
    get_req<std::vector<double>>(p, ptr, "target");
  } else if (task.kind == "joint_limits") {
    check_fields(p, ptr, {"q_plus", "q_minus"});
    get_req<std::vector<double>>(p, ptr, "q_plus");
    get_req<std::vector<double>>(p, ptr, "q_minus");
  } else if (task.kind == "orientation") {
    check_fields(p, ptr, {"link", "theta_d"});
    get_req<int>(p, ptr, "link");
    get_req<double>(p, ptr, "theta_d");
  } else if (task.kind == "look_at_point") {
    check_fields(p, ptr, {"link", "point"});
    get_req<int>(p, ptr, "link");
    get_req<std::vector<double>>(p, ptr, "point");
  } else {
    fail(ptr + "/kind", "unknown task kind '" + task.kind + "'");
  }
}

}  // namespace detail_json

inline ScenarioDoc parse_scenario_doc(const json& j) {
  using namespace detail_json;
  check_fields(j, "", {"name", "chain", "tasks", "timeline", "switch",
                       "integrator", "weights", "dynamics", "initial",
                       "rank_tol"});
  ScenarioDoc doc;
  doc.name = get_opt<std::string>(j, "", "name", "");

  if (!j.contains("chain")) fail("/chain", "missing required field");
  const json& chain = j.at("chain");
  check_fields(chain, "/chain", {"lengths", "masses", "friction", "gravity"});
  doc.lengths = get_req<std::vector<double>>(chain, "/chain", "lengths");
  doc.masses = get_opt<std::vector<double>>(chain, "/chain", "masses", {});
  if (chain.contains("friction"))
    doc.friction = get_req<double>(chain, "/chain", "friction");
  doc.gravity = get_opt<std::vector<double>>(chain, "/chain", "gravity", {});

  if (!j.contains("tasks")) fail("/tasks", "missing required field");
  if (!j.at("tasks").is_array()) fail("/tasks", "expected an array");
  int ti = 0;
  for (const json& tj : j.at("tasks")) {
    const std::string ptr = "/tasks/" + std::to_string(ti++);
    check_fields(tj, ptr, {"id", "kind", "params", "gamma", "safety_critical"});
    TaskDoc task;
    task.id = get_req<std::string>(tj, ptr, "id");
    task.kind = get_req<std::string>(tj, ptr, "kind");
    task.params = tj.contains("params") ? tj.at("params") : json::object();
    if (tj.contains("gamma")) {
      const json& g = tj.at("gamma");
      check_fields(g, ptr + "/gamma", {"kind", "gain"});
      task.gamma_kind = get_opt<std::string>(g, ptr + "/gamma", "kind", "linear");
      task.gamma_gain = get_opt<double>(g, ptr + "/gamma", "gain", 1.0);
      if (task.gamma_kind != "linear" && task.gamma_kind != "cubic")
        fail(ptr + "/gamma/kind", "expected linear or cubic");
    }
    task.safety_critical = get_opt<bool>(tj, ptr, "safety_critical", false);
    check_task_params(task, ptr + "/params");
    doc.tasks.push_back(std::move(task));
  }

  if (!j.contains("timeline")) fail("/timeline", "missing required field");
  if (!j.at("timeline").is_array() || j.at("timeline").empty())
    fail("/timeline", "expected a non-empty array");
  int si = 0;
  for (const json& sj : j.at("timeline")) {
    const std::string ptr = "/timeline/" + std::to_string(si++);
    check_fields(sj, ptr, {"until_iteration", "stack"});
    SegmentDoc seg;
    seg.until_iteration = get_req<long>(sj, ptr, "until_iteration");
    if (!sj.contains("stack")) fail(ptr + "/stack", "missing required field");
    const json& st = sj.at("stack");
    check_fields(st, ptr + "/stack", {"order", "kappa", "mode"});
    seg.stack.order = get_req<std::vector<std::vector<std::string>>>(
        st, ptr + "/stack", "order");
    seg.stack.kappa = get_opt<double>(st, ptr + "/stack", "kappa", 1e3);
    seg.stack.mode = get_opt<std::string>(st, ptr + "/stack", "mode", "fixed");
    if (seg.stack.mode != "fixed" && seg.stack.mode != "auto")
      fail(ptr + "/stack/mode", "expected fixed or auto");
    doc.timeline.push_back(std::move(seg));
  }

  if (j.contains("switch")) {
    const json& sw = j.at("switch");
    check_fields(sw, "/switch", {"duration_s", "profile"});
    doc.switch_duration_s = get_opt<double>(sw, "/switch", "duration_s", 0.5);
    doc.switch_profile = get_opt<std::string>(sw, "/switch", "profile", "linear");
    if (doc.switch_profile != "linear" && doc.switch_profile != "smoothstep")
      fail("/switch/profile", "expected linear or smoothstep");
  }

  if (j.contains("integrator")) {
    const json& in = j.at("integrator");
    check_fields(in, "/integrator", {"method", "dt"});
    doc.integrator_method =
        get_opt<std::string>(in, "/integrator", "method", "euler");
    if (doc.integrator_method != "euler" && doc.integrator_method != "rk4")
      fail("/integrator/method", "expected euler or rk4");
    if (in.contains("dt")) doc.dt = get_req<double>(in, "/integrator", "dt");
  }

  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_fields(w, "/weights", {"l", "l_delta", "l_v"});
    doc.l = get_opt<double>(w, "/weights", "l", 1e2);
    doc.l_delta = get_opt<double>(w, "/weights", "l_delta", 1e2);
    doc.l_v = get_opt<double>(w, "/weights", "l_v", 1e2);
  }

  if (j.contains("dynamics")) {
    const json& d = j.at("dynamics");
    check_fields(d, "/dynamics",
                 {"enabled", "velocity_tracking", "u_max", "gamma_u",
                  "gamma_select"});
    doc.dynamics_enabled = get_opt<bool>(d, "/dynamics", "enabled", false);
    doc.velocity_tracking =
        get_opt<bool>(d, "/dynamics", "velocity_tracking", false);
    doc.u_max = get_opt<double>(d, "/dynamics", "u_max", 60.0);
    doc.gamma_u = get_opt<double>(d, "/dynamics", "gamma_u", 10.0);
  }

  if (!j.contains("initial")) fail("/initial", "missing required field");
  const json& init = j.at("initial");
  check_fields(init, "/initial", {"q", "qdot"});
  doc.initial_q = get_req<std::vector<double>>(init, "/initial", "q");
  doc.initial_qdot = get_opt<std::vector<double>>(init, "/initial", "qdot", {});

  doc.rank_tol = get_opt<double>(j, "", "rank_tol", 5e-3);
  return doc;
}

inline json scenario_doc_to_json(const ScenarioDoc& doc) {
  json j;
  if (!doc.name.empty()) j["name"] = doc.name;
  j["chain"]["lengths"] = doc.lengths;
  if (!doc.masses.empty()) j["chain"]["masses"] = doc.masses;
  if (doc.friction) j["chain"]["friction"] = *doc.friction;
  if (!doc.gravity.empty()) j["chain"]["gravity"] = doc.gravity;
  j["tasks"] = json::array();
  for (const auto& t : doc.tasks) {
    json tj;
    tj["id"] = t.id;
    tj["kind"] = t.kind;
    tj["params"] = t.params;
    tj["gamma"] = {{"kind", t.gamma_kind}, {"gain", t.gamma_gain}};
    if (t.safety_critical) tj["safety_critical"] = true;
    j["tasks"].push_back(tj);
  }
  j["timeline"] = json::array();
  for (const auto& s : doc.timeline) {
    json sj;
    sj["until_iteration"] = s.until_iteration;
    sj["stack"] = {{"order", s.stack.order},
                   {"kappa", s.stack.kappa},
                   {"mode", s.stack.mode}};
    j["timeline"].push_back(sj);
  }
  j["switch"] = {{"duration_s", doc.switch_duration_s},
                 {"profile", doc.switch_profile}};
  j["integrator"]["method"] = doc.integrator_method;
  if (doc.dt) j["integrator"]["dt"] = *doc.dt;
  j["weights"] = {{"l", doc.l}, {"l_delta", doc.l_delta}, {"l_v", doc.l_v}};
  j["dynamics"] = {{"enabled", doc.dynamics_enabled},
                   {"velocity_tracking", doc.velocity_tracking},
                   {"u_max", doc.u_max},
                   {"gamma_u", doc.gamma_u}};
  j["initial"]["q"] = doc.initial_q;
  if (!doc.initial_qdot.empty()) j["initial"]["qdot"] = doc.initial_qdot;
  j["rank_tol"] = doc.rank_tol;
  return j;
}

// Dotted-path override (e.g. "integrator.dt=0.005"); values parsed as JSON
// with a plain-string fallback.
inline void apply_override(json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ScenarioParseError("/", "override must look like key.path=value");
  std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  std::replace(path.begin(), path.end(), '.', '/');
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  j[json::json_pointer("/" + path)] = value;
}

// --- Compilation into an executable scenario ---------------------------------

inline Scenario compile_scenario(const ScenarioDoc& doc) {
  Scenario sc;
  sc.name = doc.name;

  const int n = static_cast<int>(doc.lengths.size());
  sc.chain.link_lengths = Eigen::Map<const Vec>(doc.lengths.data(), n);
  sc.chain.link_masses =
      doc.masses.empty()
          ? Vec::Ones(n)
          : Vec(Eigen::Map<const Vec>(doc.masses.data(),
                                      static_cast<Eigen::Index>(doc.masses.size())));
  sc.chain.joint_viscous_friction = Vec::Constant(
      n, doc.friction ? *doc.friction : (doc.dynamics_enabled ? 0.1 : 0.0));
  if (!doc.gravity.empty()) {
    if (doc.gravity.size() != 2)
      throw ScenarioParseError("/chain/gravity", "expected [gx, gy]");
    sc.chain.gravity_accel = Eigen::Vector2d(doc.gravity[0], doc.gravity[1]);
  }
  sc.chain.validate();

  const int rel_degree =
      doc.dynamics_enabled && !doc.velocity_tracking ? 2 : 1;
  for (const auto& t : doc.tasks) {
    ClassKFunction gamma = t.gamma_kind == "cubic"
                               ? ClassKFunction::cubic(t.gamma_gain)
                               : ClassKFunction::linear(t.gamma_gain);
    if (t.kind == "goal_point") {
      const auto frame =
          t.params.value<std::string>("frame", "link_point");
      const auto tv = t.params.at("target").get<std::vector<double>>();
      const Vec target = Eigen::Map<const Vec>(
          tv.data(), static_cast<Eigen::Index>(tv.size()));
      FrameSelector sel = frame == "joint_vector"
                              ? FrameSelector::joint_vector()
                              : FrameSelector::link_point(
                                    t.params.at("link").get<int>());
      auto task = goal_point_task(t.id, sel, target, gamma);
      task.relative_degree = rel_degree;
      task.safety_critical = t.safety_critical;
      sc.tasks.push_back(std::move(task));
    } else if (t.kind == "joint_limits") {
      const auto qp = t.params.at("q_plus").get<std::vector<double>>();
      const auto qm = t.params.at("q_minus").get<std::vector<double>>();
      auto limits = joint_limit_tasks(
          Eigen::Map<const Vec>(qp.data(), static_cast<Eigen::Index>(qp.size())),
          Eigen::Map<const Vec>(qm.data(), static_cast<Eigen::Index>(qm.size())),
          gamma, rel_degree);
      for (auto& lim : limits) {
        lim.id = t.id + "_" + lim.id;
        sc.tasks.push_back(std::move(lim));
      }
    } else if (t.kind == "orientation") {
      auto task = orientation_task(t.id, t.params.at("link").get<int>(),
                                   t.params.at("theta_d").get<double>(), gamma);
      task.relative_degree = rel_degree;
      task.safety_critical = t.safety_critical;
      sc.tasks.push_back(std::move(task));
    } else if (t.kind == "look_at_point") {
      const auto pv = t.params.at("point").get<std::vector<double>>();
      auto task = look_at_point_task(t.id, t.params.at("link").get<int>(),
                                     Eigen::Vector2d(pv.at(0), pv.at(1)), gamma);
      task.relative_degree = rel_degree;
      task.safety_critical = t.safety_critical;
      sc.tasks.push_back(std::move(task));
    } else {
      throw ScenarioParseError("/tasks", "unknown task kind '" + t.kind + "'");
    }
  }

  for (const auto& s : doc.timeline) {
    TimelineSegment seg;
    seg.until_iteration = s.until_iteration;
    seg.stack.ordered_tasks = s.stack.order;
    seg.stack.kappa = s.stack.kappa;
    seg.stack.mode =
        s.stack.mode == "auto" ? StackMode::Auto : StackMode::Fixed;
    sc.timeline.push_back(std::move(seg));
  }

  sc.switch_duration_s = doc.switch_duration_s;
  sc.switch_profile = doc.switch_profile == "smoothstep"
                          ? SwitchProfile::Smoothstep
                          : SwitchProfile::Linear;
  sc.integrator = doc.integrator_method == "rk4" ? IntegratorMethod::Rk4
                                                 : IntegratorMethod::Euler;
  sc.dt = doc.dt ? *doc.dt : (doc.dynamics_enabled ? 1e-3 : 1e-2);
  sc.weights.l = doc.l;
  sc.weights.l_delta = doc.l_delta;
  sc.weights.l_v = doc.l_v;
  sc.model_kind = doc.dynamics_enabled
                      ? (doc.velocity_tracking
                             ? ModelKind::DynamicWithVelocityTracking
                             : ModelKind::Dynamic)
                      : ModelKind::Kinematic;
  sc.u_max = doc.u_max;
  sc.gamma_u_gain = doc.gamma_u;
  sc.rank_tol = doc.rank_tol;

  if (static_cast<int>(doc.initial_q.size()) != n)
    throw ScenarioParseError("/initial/q", "dimension mismatch with chain");
  sc.initial_state.q = Eigen::Map<const Vec>(doc.initial_q.data(), n);
  sc.initial_state.qdot =
      doc.initial_qdot.empty()
          ? Vec::Zero(n)
          : Vec(Eigen::Map<const Vec>(doc.initial_qdot.data(), n));
  sc.validate();
  return sc;
}

// --- Built-in scenarios -------------------------------------------------------

inline std::vector<std::pair<std::string, std::string>>
builtin_scenario_list() {
  return {
      {"sim1_independent",
       "three independent goal tasks on a planar 3-link arm, fixed stack"},
      {"sim2_dependent",
       "three conflicting end-effector goals, auto stack relaxation"},
      {"sim3_switching",
       "priority rotation across three segments with blended switching"},
      {"sim4_insert_remove",
       "task insertion at iteration 250 under hard joint limits"},
      {"sim5_dynamic",
       "torque-rate control with a 60 Nm integral torque barrier"},
      {"ex5_rank_loss",
       "2-DOF Cartesian rank-loss study with conflicting point goals"},
  };
}

inline ScenarioDoc builtin_scenario(const std::string& name) {
  ScenarioDoc doc;
  doc.name = name;

  auto goal = [](std::string id, int link, double x, double y,
                 double gain) {
    TaskDoc t;
    t.id = std::move(id);
    t.kind = "goal_point";
    t.params = {{"link", link}, {"target", {x, y}}};
    t.gamma_gain = gain;
    return t;
  };
  auto segment = [](long until, std::vector<std::vector<std::string>> order,
                    const char* mode) {
    SegmentDoc s;
    s.until_iteration = until;
    s.stack.order = std::move(order);
    s.stack.kappa = 1e3;
    s.stack.mode = mode;
    return s;
  };

  if (name == "sim1_independent") {
    doc.lengths = {0.5, 0.5, 0.5};
    doc.tasks = {goal("t1", 3, 0.5, 1.0, 1.0), goal("t2", 2, 0.5, 0.5, 1.0),
                 goal("t3", 1, 0.0, 0.5, 1.0)};
    doc.timeline = {segment(10000, {{"t1"}, {"t2"}, {"t3"}}, "fixed")};
    doc.initial_q = {0.1, -0.2, 0.8};
  } else if (name == "sim2_dependent") {
    doc.lengths = {0.5, 0.5, 0.5};
    doc.tasks = {goal("t1", 3, 0.5, 1.0, 1.0), goal("t2", 3, -0.2, -1.2, 1.0),
                 goal("t3", 3, -0.25, 0.0, 1.0)};
    doc.timeline = {segment(10000, {{"t1"}, {"t2"}, {"t3"}}, "auto")};
    doc.initial_q = {0.1, -0.2, 0.8};
    doc.dt = 0.002;
  } else if (name == "sim3_switching") {
    doc.lengths = {0.5, 0.5, 0.5};
    doc.tasks = {goal("t1", 3, 0.5, 1.0, 1.0), goal("t2", 3, -0.2, -1.2, 1.0),
                 goal("t3", 3, -0.25, 0.0, 1.0)};
    doc.timeline = {segment(3333, {{"t1"}, {"t2"}, {"t3"}}, "auto"),
                    segment(6666, {{"t2"}, {"t3"}, {"t1"}}, "auto"),
                    segment(10000, {{"t3"}, {"t1"}, {"t2"}}, "auto")};
    doc.initial_q = {0.1, -0.2, 0.8};
    doc.dt = 0.002;
    doc.l = doc.l_delta = doc.l_v = 10.0;
    doc.switch_duration_s = 1.0;
  } else if (name == "sim4_insert_remove") {
    doc.lengths = {0.5, 0.5, 0.5};
    TaskDoc limits;
    limits.id = "jl";
    limits.kind = "joint_limits";
    limits.params = {{"q_plus", {M_PI, 2.0 * M_PI / 3.0, 2.0 * M_PI / 3.0}},
                     {"q_minus", {-M_PI, -2.0 * M_PI / 3.0, -2.0 * M_PI / 3.0}}};
    limits.gamma_gain = 1.0;
    limits.safety_critical = true;
    TaskDoc orient;
    orient.id = "orient";
    orient.kind = "orientation";
    orient.params = {{"link", 3}, {"theta_d", M_PI / 6.0}};
    orient.gamma_gain = 1.0;
    TaskDoc lookat;
    lookat.id = "lookat";
    lookat.kind = "look_at_point";
    lookat.params = {{"link", 3}, {"point", {1.0, 0.5}}};
    lookat.gamma_gain = 1.0;
    doc.tasks = {limits, goal("pos", 3, 0.25, 0.75, 1.0), orient, lookat};
    doc.timeline = {segment(250, {{"pos"}, {"orient"}}, "auto"),
                    segment(1500, {{"pos"}, {"lookat"}}, "auto")};
    doc.initial_q = {0.1, 0.4, 0.3};
    doc.l = doc.l_delta = doc.l_v = 20.0;
  } else if (name == "sim5_dynamic") {
    doc.lengths = {0.5, 0.5, 0.5};
    TaskDoc limits;
    limits.id = "jl";
    limits.kind = "joint_limits";
    limits.params = {{"q_plus", {M_PI, 2.0 * M_PI / 3.0, 2.0 * M_PI / 3.0}},
                     {"q_minus", {-M_PI, -2.0 * M_PI / 3.0, -2.0 * M_PI / 3.0}}};
    limits.gamma_gain = 2.0;
    limits.safety_critical = true;
    doc.tasks = {goal("t1", 3, 0.5, 1.0, 2.0), goal("t2", 3, -0.2, -1.2, 2.0),
                 limits};
    doc.timeline = {segment(5000, {{"t1"}, {"t2"}}, "fixed"),
                    segment(12000, {{"t2"}, {"t1"}}, "fixed")};
    doc.initial_q = {0.1, 0.4, 0.3};
    doc.dynamics_enabled = true;
    doc.friction = 8.0;  // viscous damping keeps the torque loop from ringing
    doc.u_max = 60.0;
    doc.gamma_u = 10.0;
    // A large slack weight is needed here: the torque-rate rows scale with
    // dt, so cheap slack would otherwise absorb the tracking constraints
    // near the goal and leave a sustained oscillation in h-dot.
    doc.l = doc.l_delta = 1000.0;
  } else if (name == "ex5_rank_loss") {
    doc.lengths = {1.0, 1.0};
    TaskDoc t1, t2;
    t1.id = "t1";
    t1.kind = "goal_point";
    t1.params = {{"frame", "joint_vector"}, {"target", {-1.0, 0.0}}};
    t1.gamma_gain = 1.0;
    t2 = t1;
    t2.id = "t2";
    t2.params = {{"frame", "joint_vector"}, {"target", {1.0, 0.0}}};
    doc.tasks = {t1, t2};
    doc.timeline = {segment(1500, {{"t1"}, {"t2"}}, "fixed")};
    doc.initial_q = {-2.0, 0.0};
    doc.dt = 0.001;
    doc.l = 20.0;  // keeps the explicit-Euler loop stable near the rank-loss point
  } else {
    throw ScenarioParseError("/", "unknown builtin scenario '" + name + "'");
  }
  return doc;
}

// --- Trace CSV ----------------------------------------------------------------

inline std::vector<std::string> trace_csv_header(const Scenario& sc,
                                                 const std::vector<TraceRecord>& trace) {
  const int n = sc.chain.dof();
  const bool dynamic = sc.model_kind != ModelKind::Kinematic;
  size_t v_cols = 0;
  for (const auto& rec : trace)
    v_cols = std::max(v_cols, static_cast<size_t>(rec.v.size()));

  std::vector<std::string> cols = {"t", "iter"};
  for (int i = 1; i <= n; ++i) cols.push_back("q" + std::to_string(i));
  for (int i = 1; i <= n; ++i) cols.push_back("qd" + std::to_string(i));
  for (int i = 1; i <= n; ++i) cols.push_back("u" + std::to_string(i));
  if (dynamic)
    for (int i = 1; i <= n; ++i) cols.push_back("tau" + std::to_string(i));
  for (const auto& task : sc.tasks) cols.push_back("h_" + task.id);
  if (dynamic)
    for (const auto& task : sc.tasks) cols.push_back("hprime_" + task.id);
  for (const auto& task : sc.tasks) cols.push_back("delta_" + task.id);
  for (size_t i = 1; i <= v_cols; ++i) cols.push_back("v_" + std::to_string(i));
  cols.insert(cols.end(), {"V_gamma", "V_z", "rank", "rank_drop", "active_set",
                           "du_inf"});
  return cols;
}

inline void write_trace_csv(std::ostream& os, const Scenario& sc,
                            const std::vector<TraceRecord>& trace) {
  const auto cols = trace_csv_header(sc, trace);
  size_t v_cols = 0;
  for (const auto& rec : trace)
    v_cols = std::max(v_cols, static_cast<size_t>(rec.v.size()));
  const bool dynamic = sc.model_kind != ModelKind::Kinematic;

  for (size_t i = 0; i < cols.size(); ++i)
    os << (i ? "," : "") << cols[i];
  os << "\n";

  os << std::setprecision(17);
  auto put_vec = [&](const Vec& v, Eigen::Index want) {
    for (Eigen::Index i = 0; i < want; ++i)
      os << "," << (i < v.size() ? v(i) : 0.0);
  };
  const int n = sc.chain.dof();
  const int m = static_cast<int>(sc.tasks.size());
  for (const auto& rec : trace) {
    os << rec.t << "," << rec.iteration;
    put_vec(rec.q, n);
    put_vec(rec.qdot, n);
    put_vec(rec.u, n);
    if (dynamic) put_vec(rec.tau, n);
    put_vec(rec.h, m);
    if (dynamic) put_vec(rec.h_prime, m);
    put_vec(rec.delta, m);
    put_vec(rec.v, static_cast<Eigen::Index>(v_cols));
    os << "," << rec.V_gamma << "," << rec.V_z << "," << rec.rank_value << ","
       << (rec.rank_drop ? 1 : 0) << ",";
    for (size_t i = 0; i < rec.active_set.size(); ++i)
      os << (i ? ";" : "") << rec.active_set[i];
    os << "," << rec.du_inf << "\n";
  }
}

// --- Run summary ----------------------------------------------------------------

inline double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double idx = p * (xs.size() - 1);
  const size_t lo = static_cast<size_t>(idx);
  const size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (idx - lo) * (xs[hi] - xs[lo]);
}

inline json summarize_trace(const Scenario& sc,
                            const std::vector<TraceRecord>& trace) {
  json s;
  s["name"] = sc.name;
  s["iterations"] = trace.size();
  s["dt"] = sc.dt;
  if (trace.empty()) return s;

  const auto& last = trace.back();
  const auto& mid = trace[trace.size() / 2];
  const bool dynamic = sc.model_kind != ModelKind::Kinematic;

  for (size_t i = 0; i < sc.tasks.size(); ++i) {
    const auto& id = sc.tasks[i].id;
    s["final_h"][id] = last.h(static_cast<Eigen::Index>(i));
    s["mid_h"][id] = mid.h(static_cast<Eigen::Index>(i));
    double hmin = std::numeric_limits<double>::infinity();
    for (const auto& rec : trace)
      hmin = std::min(hmin, rec.h(static_cast<Eigen::Index>(i)));
    s["min_h"][id] = hmin;
    if (dynamic) {
      s["final_hprime"][id] = last.h_prime(static_cast<Eigen::Index>(i));
      s["mid_hprime"][id] = mid.h_prime(static_cast<Eigen::Index>(i));
    }
  }
  s["final_V_z"] = last.V_z;
  s["final_V_gamma"] = last.V_gamma;
  s["final_v_norm2"] = last.v.squaredNorm();

  double v_gamma_worst_increase = 0.0;
  for (size_t k = 1; k < trace.size(); ++k)
    v_gamma_worst_increase = std::max(
        v_gamma_worst_increase, trace[k].V_gamma - trace[k - 1].V_gamma);
  s["V_gamma_max_increase"] = v_gamma_worst_increase;

  if (dynamic) {
    double tau_max = 0.0;
    for (const auto& rec : trace)
      tau_max = std::max(tau_max, rec.tau.lpNorm<Eigen::Infinity>());
    s["max_tau_inf"] = tau_max;
  }

  // Per switch boundary: max input jump inside the window vs twice the 95th
  // percentile of jumps over the preceding steady segment. The monitored
  // channel is the signal actually driving the robot: u for kinematic models,
  // tau for torque-controlled ones.
  auto step_jump = [&](long k) {
    const auto& cur = trace[static_cast<size_t>(k)];
    const auto& prev = trace[static_cast<size_t>(k - 1)];
    if (dynamic && cur.tau.size() == prev.tau.size() && cur.tau.size() > 0)
      return (cur.tau - prev.tau).lpNorm<Eigen::Infinity>();
    return cur.du_inf;
  };
  const long window = std::lround(sc.switch_duration_s / sc.dt);
  s["continuity"] = json::array();
  for (size_t seg = 1; seg < sc.timeline.size(); ++seg) {
    const long boundary = sc.timeline[seg - 1].until_iteration;
    const long seg_begin =
        seg >= 2 ? sc.timeline[seg - 2].until_iteration : 0;
    // Skip the blend window at the head of the baseline segment; the very
    // first segment starts without a switch, so nothing is skipped there.
    const long base_from = seg >= 2 ? seg_begin + window : seg_begin;
    std::vector<double> baseline;
    for (long k = base_from; k < boundary; ++k)
      if (k > 0 && k < static_cast<long>(trace.size()))
        baseline.push_back(step_jump(k));
    double window_max = 0.0;
    for (long k = boundary; k < boundary + window; ++k)
      if (k > 0 && k < static_cast<long>(trace.size()))
        window_max = std::max(window_max, step_jump(k));
    const double p95 = percentile(baseline, 0.95);
    json c;
    c["boundary_iteration"] = boundary;
    c["window_max_jump"] = window_max;
    c["baseline_p95"] = p95;
    c["pass"] = window_max <= 2.0 * p95;
    s["continuity"].push_back(c);
  }

  long first_drop = -1;
  for (const auto& rec : trace)
    if (rec.rank_drop) {
      first_drop = rec.iteration;
      break;
    }
  s["rank"]["first_drop_iteration"] = first_drop;
  if (first_drop >= 0) {
    const auto& rec = trace[static_cast<size_t>(first_drop)];
    s["rank"]["q_at_drop"] = std::vector<double>(
        rec.q.data(), rec.q.data() + rec.q.size());
  }
  return s;
}

}  // namespace esb
