#include "uisim/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "uisim/codec.hpp"
#include "uisim/config.hpp"
#include "uisim/dataset.hpp"
#include "uisim/error.hpp"
#include "uisim/fid.hpp"
#include "uisim/image.hpp"
#include "uisim/layout.hpp"
#include "uisim/raster.hpp"
#include "uisim/service.hpp"
#include "uisim/session.hpp"
#include "uisim/transition.hpp"

namespace uisim {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_stop_requested{false};

extern "C" void on_stop_signal(int) { g_stop_requested = true; }

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

UsageError usage_error(const std::string& msg) { return UsageError(msg); }

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

// Flags shared by every verb that builds backends or opens the store.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<std::string> store;
  std::optional<std::string> predictor;
  std::optional<std::string> renderer;
  std::optional<std::string> embedder;
  std::optional<std::string> theme;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<long long> layout_timeout_ms;
  std::optional<long long> render_timeout_ms;
  std::optional<std::string> cors_origin;
  bool pass_prior_layout = false;

  void add_backend_options(CLI::App* app) {
    app->add_option("--config", config_file, "TOML config file")->check(CLI::ExistingFile);
    app->add_option("--store", store, "Session store directory (env UISIM_STORE_DIR)");
    app->add_option("--predictor", predictor,
                    "Layout predictor: rule:<graph.json>, rule:demo, remote:<url> or http://...");
    app->add_option("--renderer", renderer, "Renderer: builtin or remote:<url>");
    app->add_option("--theme", theme, "Built-in renderer theme (light, dark)");
    app->add_option("--width", width, "Render width in pixels");
    app->add_option("--height", height, "Render height in pixels");
    app->add_option("--layout-timeout-ms", layout_timeout_ms, "Layout stage timeout");
    app->add_option("--render-timeout-ms", render_timeout_ms, "Render stage timeout");
    app->add_flag("--pass-prior-layout", pass_prior_layout,
                  "Send the current layout to the predictor as a hint");
  }

  void add_server_options(CLI::App* app) {
    app->add_option("--host", host, "Listen address");
    app->add_option("--port", port, "Listen port (0 picks a free one)");
    app->add_option("--embedder", embedder, "Embedding endpoint URL");
    app->add_option("--cors-origin", cors_origin, "Access-Control-Allow-Origin value");
  }

  ServiceConfig resolve() const {
    ServiceConfig c;
    if (!config_file.empty()) c = load_config_file(config_file, c);
    c.apply_process_env();
    if (host) c.host = *host;
    if (port) c.port = *port;
    if (store) c.store_dir = *store;
    if (predictor) c.predictor = *predictor;
    if (renderer) c.renderer = *renderer;
    if (embedder) c.embedder = *embedder;
    if (theme) c.theme = *theme;
    if (width) c.width = *width;
    if (height) c.height = *height;
    if (layout_timeout_ms) c.layout_timeout = std::chrono::milliseconds(*layout_timeout_ms);
    if (render_timeout_ms) c.render_timeout = std::chrono::milliseconds(*render_timeout_ms);
    if (cors_origin) c.cors_origin = *cors_origin;
    if (pass_prior_layout) c.pass_prior_layout = true;
    c.validate();
    return c;
  }
};

struct ActionFlags {
  std::string text;
  std::string kind;
  std::string point;
  std::optional<std::string> typed;

  void add(CLI::App* app, bool required = true) {
    auto* o = app->add_option("--action,-a", text, "Action description, e.g. \"open email app\"");
    if (required) o->required();
    app->add_option("--kind", kind, "Structured kind: tap, type, scroll, open_app, back, home, other");
    app->add_option("--point", point, "Normalized target point x,y for taps");
    app->add_option("--typed", typed, "Text typed by a TYPE action");
  }

  SimAction build() const {
    SimAction a = SimAction::from_text(text);
    if (!kind.empty()) {
      std::string upper = kind;
      std::transform(upper.begin(), upper.end(), upper.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      a.kind = action_kind_from_name(upper);
      if (!a.kind) throw Error(ErrorCode::kInvalidAction, "unknown action kind '" + kind + "'");
    }
    if (!point.empty()) {
      const auto comma = point.find(',');
      try {
        if (comma == std::string::npos) throw std::invalid_argument(point);
        a.point = Point{std::stod(point.substr(0, comma)), std::stod(point.substr(comma + 1))};
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidAction, "point must be x,y, got '" + point + "'");
      }
    }
    a.typed_text = typed;
    a.validate();
    return a;
  }
};

// Inline JSON, or @path to read it from a file.
json json_argument(const std::string& arg) {
  const std::string text = !arg.empty() && arg[0] == '@' ? read_file_text(arg.substr(1)) : arg;
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw usage_error("not valid JSON: " + arg);
  return j;
}

json session_summary(const SessionTree& tree) {
  return {{"session_id", tree.session_id()},
          {"node_count", tree.size()},
          {"created_at", tree.created_at()},
          {"updated_at", tree.updated_at()}};
}

void print_tree(std::ostream& out, const SessionTree& tree, NodeId id, int depth) {
  const auto& node = tree.node(id);
  out << std::string(static_cast<std::size_t>(depth) * 2, ' ') << id;
  if (node.state.action_taken) out << "  " << node.state.action_taken->text;
  if (node.state.layout.screen_id) out << "  [" << *node.state.layout.screen_id << "]";
  out << "\n";
  for (NodeId child : tree.children(id)) print_tree(out, tree, child, depth + 1);
}

std::vector<Image> load_png_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw usage_error("not a directory: " + dir.string());
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<Image> images;
  images.reserve(paths.size());
  for (const auto& p : paths) images.push_back(load_png(p));
  return images;
}

json rollout_json(const std::string& sid, const SessionTree& tree, const RolloutResult& result) {
  json nodes = json::array();
  for (NodeId id : result.created) nodes.push_back(node_manifest(tree.node(id)));
  json failures = json::array();
  for (const auto& f : result.failures)
    failures.push_back({{"action_index", f.action_index}, {"error", problem_json(f.error)}});
  json j = {{"session_id", sid}, {"created", result.created}, {"nodes", nodes}, {"failures", failures}};
  if (!result.ok()) j["error"] = problem_json(result.failures.front().error);
  return j;
}

struct AnnotatorFlags {
  std::string episodes;
  std::string action_url;
  std::string layout_url;
  std::size_t max_in_flight = 4;
  int retries = RetryPolicy{}.max_retries;
  long long backoff_ms = RetryPolicy{}.initial_backoff.count();
  long long timeout_ms = 60'000;

  void add(CLI::App* app, bool annotators) {
    app->add_option("--episodes", episodes, "Directory of episode manifests")
        ->required()
        ->check(CLI::ExistingDirectory);
    if (!annotators) return;
    app->add_option("--action-annotator", action_url, "Action annotation endpoint URL")->required();
    app->add_option("--layout-annotator", layout_url, "Layout annotation endpoint URL")->required();
    app->add_option("--max-in-flight", max_in_flight, "Concurrent annotation requests")
        ->check(CLI::Range(1, 64));
    app->add_option("--retries", retries, "Retries per request on 429/5xx")->check(CLI::Range(0, 16));
    app->add_option("--backoff-ms", backoff_ms, "Initial retry backoff");
    app->add_option("--timeout-ms", timeout_ms, "Per-request timeout");
  }

  RetryPolicy retry() const {
    RetryPolicy r;
    r.max_retries = retries;
    r.initial_backoff = std::chrono::milliseconds(backoff_ms);
    return r;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mobile UI world-model simulator", "uisim"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "Machine-readable JSON output");

  // serve
  ConfigFlags serve_flags;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve_flags.add_backend_options(serve);
  serve_flags.add_server_options(serve);

  // render
  std::string render_in, render_out, render_theme = "light";
  int render_w = kDefaultWidth, render_h = kDefaultHeight;
  bool render_overlay = false;
  auto* render_cmd = app.add_subcommand("render", "Rasterize a layout DSL file to PNG");
  render_cmd->add_option("layout", render_in, "Layout DSL file")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("-o,--output", render_out, "Output PNG")->required();
  render_cmd->add_option("--theme", render_theme, "Theme (light, dark)");
  render_cmd->add_option("--width", render_w, "Width in pixels");
  render_cmd->add_option("--height", render_h, "Height in pixels");
  render_cmd->add_flag("--overlay", render_overlay, "Draw element outlines and class labels");

  // step
  ConfigFlags step_flags;
  ActionFlags step_action;
  std::string step_image, step_layout, step_out_dir = ".", step_name = "next";
  auto* step_cmd = app.add_subcommand("step", "Run one two-stage transition on a screenshot");
  step_cmd->add_option("--image", step_image, "Current screen PNG")->required()->check(CLI::ExistingFile);
  step_cmd->add_option("--layout", step_layout, "Current layout DSL file")->check(CLI::ExistingFile);
  step_action.add(step_cmd);
  step_flags.add_backend_options(step_cmd);
  step_cmd->add_option("--out-dir", step_out_dir, "Where to write <name>.uil and <name>.png");
  step_cmd->add_option("--name", step_name, "Output file stem");

  // rollout
  ConfigFlags rollout_flags;
  std::string rollout_session, rollout_actions_json;
  std::vector<std::string> rollout_actions;
  NodeId rollout_from = 0;
  bool rollout_continue = false;
  auto* rollout_cmd = app.add_subcommand("rollout", "Apply a sequence of actions within a session");
  rollout_cmd->add_option("--session", rollout_session, "Session id")->required();
  rollout_cmd->add_option("--from", rollout_from, "Start node id");
  auto* ra = rollout_cmd->add_option("--action,-a", rollout_actions, "Action text (repeatable)");
  auto* rj = rollout_cmd->add_option("--actions-json", rollout_actions_json,
                                     "JSON array of actions (inline or @file)");
  ra->excludes(rj);
  rollout_cmd->add_flag("--continue-on-error", rollout_continue, "Skip failed actions");
  rollout_flags.add_backend_options(rollout_cmd);

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Build training data from trajectories");
  dataset->require_subcommand(1);
  AnnotatorFlags extract_flags, annotate_flags, build_flags;
  auto* ds_extract = dataset->add_subcommand("extract", "List keypoint pairs per episode");
  extract_flags.add(ds_extract, false);
  std::string annotate_out;
  auto* ds_annotate = dataset->add_subcommand("annotate", "Annotate every pair into JSONL");
  annotate_flags.add(ds_annotate, true);
  ds_annotate->add_option("-o,--output", annotate_out, "Output JSONL file")->required();
  std::string build_out;
  std::size_t build_target = 0;
  std::uint64_t build_seed = 0;
  auto* ds_build = dataset->add_subcommand("build", "Annotate, split and write a dataset");
  build_flags.add(ds_build, true);
  ds_build->add_option("--train-target", build_target, "Train example target")->required();
  ds_build->add_option("--seed", build_seed, "Split seed");
  ds_build->add_option("-o,--out", build_out, "Output directory")->required();
  std::string validate_path;
  auto* ds_validate = dataset->add_subcommand("validate", "Check a dataset manifest's arithmetic");
  ds_validate->add_option("manifest", validate_path, "manifest.json")->required()->check(CLI::ExistingFile);

  // fid
  std::string fid_generated, fid_reference, fid_extractor = "builtin", fid_output;
  std::optional<std::string> fid_embedder;
  std::vector<std::string> fid_compare;
  auto* fid_cmd = app.add_subcommand("fid", "Fréchet distance between two PNG directories");
  auto* fg = fid_cmd->add_option("--generated", fid_generated, "Generated images")
                 ->check(CLI::ExistingDirectory);
  auto* fr = fid_cmd->add_option("--reference", fid_reference, "Reference images")
                 ->check(CLI::ExistingDirectory);
  fid_cmd->add_option("--extractor", fid_extractor, "builtin or remote")
      ->check(CLI::IsMember({"builtin", "remote"}));
  fid_cmd->add_option("--embedder", fid_embedder, "Embedding endpoint (env UISIM_EMBEDDER_URL)");
  fid_cmd->add_option("-o,--output", fid_output, "Also write the report here");
  auto* fc = fid_cmd->add_option("--compare", fid_compare, "BASELINE.json CANDIDATE.json")
                 ->expected(2)
                 ->check(CLI::ExistingFile);
  fc->excludes(fg)->excludes(fr);
  fg->needs(fr);
  fr->needs(fg);

  // session
  auto* session = app.add_subcommand("session", "Inspect and grow stored sessions");
  session->require_subcommand(1);
  ConfigFlags s_create_flags, s_list_flags, s_show_flags, s_step_flags, s_image_flags, s_layout_flags;
  std::string sc_image, sc_layout;
  auto* s_create = session->add_subcommand("create", "New session from a screenshot");
  s_create->add_option("--image", sc_image, "Initial screen PNG")->required()->check(CLI::ExistingFile);
  s_create->add_option("--layout", sc_layout, "Initial layout DSL file")->check(CLI::ExistingFile);
  s_create_flags.add_backend_options(s_create);
  auto* s_list = session->add_subcommand("list", "List stored sessions");
  s_list_flags.add_backend_options(s_list);
  std::string s_id;
  NodeId s_node = 0;
  std::string s_image_out;
  ActionFlags s_action;
  auto* s_show = session->add_subcommand("show", "Show a session tree");
  s_show->add_option("session", s_id, "Session id")->required();
  s_show_flags.add_backend_options(s_show);
  auto* s_step = session->add_subcommand("step", "Branch a new node from a node");
  s_step->add_option("session", s_id, "Session id")->required();
  s_step->add_option("--node", s_node, "Node to branch from");
  s_action.add(s_step);
  s_step_flags.add_backend_options(s_step);
  auto* s_image = session->add_subcommand("image", "Write a node's image");
  s_image->add_option("session", s_id, "Session id")->required();
  s_image->add_option("--node", s_node, "Node id");
  s_image->add_option("-o,--output", s_image_out, "Output PNG")->required();
  s_image_flags.add_backend_options(s_image);
  auto* s_layout = session->add_subcommand("layout", "Print a node's layout DSL");
  s_layout->add_option("session", s_id, "Session id")->required();
  s_layout->add_option("--node", s_node, "Node id");
  s_layout_flags.add_backend_options(s_layout);

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-') {
    const auto subs = app.get_subcommands([&](CLI::App* s) { return s->get_name() == args.front(); });
    if (subs.empty()) {
      err << "error: unknown verb '" << args.front() << "'\n\n" << app.help();
      return kExitUsage;
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* cur = &app;
    while (!cur->get_subcommands().empty()) cur = cur->get_subcommands().front();
    out << cur->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* cur = &app;
    while (!cur->get_subcommands().empty()) cur = cur->get_subcommands().front();
    err << "error: " << e.what() << "\n\n" << cur->help();
    return kExitUsage;
  }

  try {
    if (serve->parsed()) {
      const ServiceConfig config = serve_flags.resolve();
      Service service(config);
      g_stop_requested = false;
      std::signal(SIGINT, on_stop_signal);
      std::signal(SIGTERM, on_stop_signal);
      const int port = service.start();
      out << "uisim listening on http://" << config.host << ":" << port << std::endl;
      while (!g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      service.stop();
      return kExitOk;
    }

    if (render_cmd->parsed()) {
      const ScreenLayout layout = parse_layout(read_file_text(render_in));
      const Theme theme = theme_by_name(render_theme);
      Image image = render(layout, theme, render_w, render_h);
      if (render_overlay) image = overlay_layout(image, layout, theme);
      const auto png = encode_png(image);
      write_file_atomic(render_out, png);
      if (as_json)
        out << json{{"output", render_out},
                    {"width", image.width},
                    {"height", image.height},
                    {"image_sha256", sha256_hex(png)}}
                   .dump(2)
            << "\n";
      else
        out << "wrote " << render_out << " (" << image.width << "x" << image.height << ")\n";
      return kExitOk;
    }

    if (step_cmd->parsed()) {
      SimState current;
      current.image = load_png(step_image);
      current.layout = step_layout.empty() ? placeholder_layout()
                                           : parse_layout(read_file_text(step_layout));
      ConfigFlags flags = step_flags;
      if (!flags.width) flags.width = current.image.width;
      if (!flags.height) flags.height = current.image.height;
      const ServiceConfig config = flags.resolve();
      const Theme theme = theme_by_name(config.theme);
      const auto predictor = make_predictor(config.predictor, theme, config.layout_timeout);
      const auto renderer =
          make_renderer(config.renderer, theme, config.width, config.height, config.render_timeout);
      const SimState next = step(*predictor, *renderer, current, step_action.build(),
                                 StepOptions{config.pass_prior_layout});
      fs::create_directories(step_out_dir);
      const fs::path layout_path = fs::path(step_out_dir) / (step_name + ".uil");
      const fs::path image_path = fs::path(step_out_dir) / (step_name + ".png");
      const std::string dsl = serialize_layout(next.layout);
      const auto png = encode_png(next.image);
      write_file_atomic(layout_path, dsl);
      write_file_atomic(image_path, png);
      if (as_json) {
        json j = {{"layout_dsl", dsl},
                  {"layout_path", layout_path.string()},
                  {"image_path", image_path.string()},
                  {"image_sha256", sha256_hex(png)},
                  {"backend_info",
                   {{"predictor", next.backend_info.predictor},
                    {"renderer", next.backend_info.renderer},
                    {"predictor_metadata", next.backend_info.predictor_metadata}}},
                  {"latency_ms",
                   {{"layout", next.latency_ms.layout_ms}, {"render", next.latency_ms.render_ms}}}};
        out << j.dump(2) << "\n";
      } else {
        out << dsl << "layout: " << layout_path.string() << "\nimage: " << image_path.string() << "\n";
      }
      return kExitOk;
    }

    if (rollout_cmd->parsed()) {
      RolloutRequest request;
      request.start_node = rollout_from;
      request.stop_on_error = !rollout_continue;
      if (!rollout_actions_json.empty()) {
        const json arr = json_argument(rollout_actions_json);
        if (!arr.is_array()) throw usage_error("--actions-json must be a JSON array");
        for (const auto& a : arr) request.actions.push_back(action_from_json(a));
      } else {
        for (const auto& a : rollout_actions) request.actions.push_back(SimAction::from_text(a));
      }
      if (request.actions.empty()) throw usage_error("rollout needs --action or --actions-json");
      auto manager = make_session_manager(rollout_flags.resolve());
      const RolloutResult result = manager->rollout(rollout_session, request);
      const auto tree = manager->get(rollout_session);
      if (as_json) {
        out << rollout_json(rollout_session, *tree, result).dump(2) << "\n";
      } else {
        for (NodeId id : result.created)
          out << id << "\t" << tree->node(id).state.action_taken->text << "\n";
        for (const auto& f : result.failures)
          err << "action " << f.action_index << " failed: " << f.error.code_name() << ": "
              << f.error.what() << "\n";
      }
      return result.ok() ? kExitOk : kExitDomainError;
    }

    if (ds_extract->parsed()) {
      const auto episodes = load_episodes(extract_flags.episodes);
      json list = json::array();
      std::size_t total = 0;
      for (const auto& ep : episodes) {
        const auto pairs = extract_pairs(ep);
        total += pairs.size();
        json pj = json::array();
        for (const auto& p : pairs)
          pj.push_back({{"pair_index", p.pair_index},
                        {"initial_frame", p.initial_frame_ref},
                        {"next_frame", p.next_frame_ref}});
        if (!as_json) out << ep.episode_id << "\t" << pairs.size() << "\n";
        list.push_back({{"episode_id", ep.episode_id}, {"pairs", pj}});
      }
      if (as_json)
        out << json{{"episodes", list}, {"total_pairs", total}}.dump(2) << "\n";
      else
        out << "total\t" << total << "\n";
      return kExitOk;
    }

    if (ds_annotate->parsed()) {
      const auto episodes = load_episodes(annotate_flags.episodes);
      const std::string token = env("UISIM_ANNOTATOR_TOKEN").value_or("");
      const auto timeout = std::chrono::milliseconds(annotate_flags.timeout_ms);
      RemoteActionAnnotator actions(annotate_flags.action_url, timeout, annotate_flags.retry(), token);
      RemoteLayoutAnnotator layouts(annotate_flags.layout_url, timeout, annotate_flags.retry(), token);
      const AnnotatedPairs result = annotate_episodes(episodes, actions, layouts,
                                                      annotate_flags.max_in_flight,
                                                      [&err](const std::string& m) { err << m << "\n"; });
      std::string jsonl;
      for (const auto& ex : result.examples) jsonl += ex.to_json().dump() + "\n";
      write_file_atomic(annotate_out, jsonl);
      const json summary = {{"pairs", result.total_pairs},
                            {"examples", result.examples.size()},
                            {"skipped", result.skips.size()},
                            {"output", annotate_out}};
      if (as_json)
        out << summary.dump(2) << "\n";
      else
        out << result.examples.size() << " examples, " << result.skips.size() << " skipped of "
            << result.total_pairs << " pairs -> " << annotate_out << "\n";
      return kExitOk;
    }

    if (ds_build->parsed()) {
      const auto episodes = load_episodes(build_flags.episodes);
      const std::string token = env("UISIM_ANNOTATOR_TOKEN").value_or("");
      const auto timeout = std::chrono::milliseconds(build_flags.timeout_ms);
      RemoteActionAnnotator actions(build_flags.action_url, timeout, build_flags.retry(), token);
      RemoteLayoutAnnotator layouts(build_flags.layout_url, timeout, build_flags.retry(), token);
      DatasetConfig config;
      config.train_target = build_target;
      config.seed = build_seed;
      config.out_dir = build_out;
      config.max_in_flight = build_flags.max_in_flight;
      const DatasetManifest m = build_dataset(episodes, actions, layouts, config,
                                              [&err](const std::string& msg) { err << msg << "\n"; });
      if (as_json)
        out << m.to_json().dump(2) << "\n";
      else
        out << "train " << m.train_examples << " (target " << m.train_target << ", delta "
            << m.target_delta() << "), eval " << m.eval_examples << ", skipped " << m.skipped
            << " -> " << build_out << "\n";
      return kExitOk;
    }

    if (ds_validate->parsed()) {
      const DatasetManifest m = DatasetManifest::from_json(json_argument("@" + validate_path));
      validate_manifest(m);
      if (as_json)
        out << json{{"valid", true},
                    {"examples", m.total_examples},
                    {"train", m.train_examples},
                    {"eval", m.eval_examples},
                    {"target_delta", m.target_delta()}}
                   .dump(2)
            << "\n";
      else
        out << "ok: " << m.total_examples << " examples = " << m.train_examples << " train + "
            << m.eval_examples << " eval\n";
      return kExitOk;
    }

    if (fid_cmd->parsed()) {
      json result;
      if (!fid_compare.empty()) {
        const FidReport base = FidReport::from_json(json_argument("@" + fid_compare[0]));
        const FidReport cand = FidReport::from_json(json_argument("@" + fid_compare[1]));
        result = {{"baseline", base.to_json()},
                  {"candidate", cand.to_json()},
                  {"improvement", fid_improvement(base, cand)}};
      } else {
        if (fid_generated.empty()) throw usage_error("fid needs --generated and --reference, or --compare");
        std::unique_ptr<FeatureExtractor> extractor;
        if (fid_extractor == "remote") {
          const auto url = fid_embedder ? fid_embedder : env("UISIM_EMBEDDER_URL");
          if (!url) throw usage_error("--extractor remote needs --embedder or UISIM_EMBEDDER_URL");
          extractor = std::make_unique<RemoteExtractor>(*url);
        } else {
          extractor = std::make_unique<BuiltinExtractor>();
        }
        result = evaluate_fid(load_png_dir(fid_generated), load_png_dir(fid_reference), *extractor)
                     .to_json();
      }
      if (!fid_output.empty()) write_file_atomic(fid_output, result.dump(2) + "\n");
      out << result.dump(2) << "\n";
      return kExitOk;
    }

    if (s_create->parsed()) {
      auto manager = make_session_manager(s_create_flags.resolve());
      std::optional<ScreenLayout> layout;
      if (!sc_layout.empty()) {
        layout = parse_layout(read_file_text(sc_layout));
        layout->source = LayoutSource::kAnnotated;
      }
      const auto tree = manager->create(load_png(sc_image), layout);
      if (as_json) {
        json j = session_summary(*tree);
        j["root_id"] = tree->root_id();
        j["session"] = session_manifest(*tree);
        out << j.dump(2) << "\n";
      } else {
        out << tree->session_id() << "\n";
      }
      return kExitOk;
    }

    if (s_list->parsed()) {
      auto manager = make_session_manager(s_list_flags.resolve());
      json list = json::array();
      for (const auto& id : manager->list()) {
        if (as_json)
          list.push_back(session_summary(*manager->get(id)));
        else
          out << id << "\n";
      }
      if (as_json) out << json{{"sessions", list}}.dump(2) << "\n";
      return kExitOk;
    }

    if (s_show->parsed()) {
      auto manager = make_session_manager(s_show_flags.resolve());
      const auto tree = manager->get(s_id);
      if (as_json)
        out << session_manifest(*tree).dump(2) << "\n";
      else
        print_tree(out, *tree, tree->root_id(), 0);
      return kExitOk;
    }

    if (s_step->parsed()) {
      auto manager = make_session_manager(s_step_flags.resolve());
      const NodeId id = manager->branch_step(s_id, s_node, s_action.build());
      if (as_json)
        out << json{{"session_id", s_id}, {"node", node_manifest(manager->get(s_id)->node(id))}}.dump(2)
            << "\n";
      else
        out << id << "\n";
      return kExitOk;
    }

    if (s_image->parsed()) {
      auto manager = make_session_manager(s_image_flags.resolve());
      const auto png = encode_png(manager->get(s_id)->node(s_node).state.image);
      write_file_atomic(s_image_out, png);
      if (as_json)
        out << json{{"output", s_image_out}, {"image_sha256", sha256_hex(png)}}.dump(2) << "\n";
      else
        out << "wrote " << s_image_out << "\n";
      return kExitOk;
    }

    if (s_layout->parsed()) {
      auto manager = make_session_manager(s_layout_flags.resolve());
      out << serialize_layout(manager->get(s_id)->node(s_node).state.layout);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    if (as_json) {
      err << problem_json(e).dump() << "\n";
    } else {
      err << "error: " << e.code_name() << ": " << e.what() << "\n";
      if (!e.detail().empty()) err << e.detail() << "\n";
    }
    return kExitDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace uisim
