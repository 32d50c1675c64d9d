#include <doctest.h>

#include <sstream>

#include "stub_backend.hpp"
#include "test_util.hpp"
#include "uisim/cli.hpp"
#include "uisim/codec.hpp"
#include "uisim/config.hpp"
#include "uisim/dataset.hpp"
#include "uisim/fid.hpp"
#include "uisim/raster.hpp"
#include "uisim/service.hpp"

#include <httplib.h>

using namespace uisim;
using uisim::testing::StubBackend;
using uisim::testing::TempDir;

namespace {

constexpr int kW = 108;
constexpr int kH = 240;

struct Run {
  int code;
  std::string out;
  std::string err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const AppGraph& demo_graph() {
  static const AppGraph g = AppGraph::load(demo_appgraph_path());
  return g;
}

Image screen_image(const std::string& id) { return render(demo_graph().screens.at(id), light_theme(), kW, kH); }

std::vector<std::string> small(const std::filesystem::path& store) {
  return {"--store", store.string(), "--width", std::to_string(kW), "--height", std::to_string(kH)};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Drops fields that legitimately differ between two runs of the same steps.
nlohmann::json normalized(nlohmann::json m) {
  m.erase("session_id");
  m.erase("created_at");
  m.erase("updated_at");
  for (auto& n : m["nodes"]) n.erase("latency_ms");
  return m;
}

}  // namespace

TEST_CASE("usage errors") {
  auto r = cli({"frobnicate"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("unknown verb 'frobnicate'") != std::string::npos);
  CHECK(r.err.find("render") != std::string::npos);

  r = cli({});
  CHECK(r.code == kExitUsage);

  r = cli({"render"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--output") != std::string::npos);

  r = cli({"step", "--image", "/nonexistent.png", "--action", "x"});
  CHECK(r.code == kExitUsage);

  r = cli({"dataset", "build", "--episodes", "/tmp"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--train-target") != std::string::npos);

  r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("session") != std::string::npos);
  r = cli({"session", "--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("create") != std::string::npos);
}

TEST_CASE("render") {
  TempDir dir;
  const auto layout_path = uisim::testing::test_dir() / "fixtures" / "login.uil";
  auto r = cli({"render", layout_path.string(), "-o", (dir / "out.png").string(), "--width", "108", "--height",
                "240"});
  CHECK(r.code == kExitOk);
  CHECK(load_png(dir / "out.png") == render(parse_layout(read_file_text(layout_path)), light_theme(), 108, 240));

  r = cli({"--json", "render", layout_path.string(), "-o", (dir / "dark.png").string(), "--theme", "dark",
           "--width", "54", "--height", "120"});
  CHECK(r.code == kExitOk);
  CHECK(r.json()["output"] == (dir / "dark.png").string());
  CHECK(load_png(dir / "dark.png").width == 54);

  r = cli({"render", layout_path.string(), "-o", (dir / "ov.png").string(), "--overlay", "--width", "108",
           "--height", "240"});
  CHECK(r.code == kExitOk);
  CHECK(load_png(dir / "ov.png") != load_png(dir / "out.png"));

  write_file_atomic(dir / "bad.uil", std::string_view("BUTTON ((("));
  r = cli({"render", (dir / "bad.uil").string(), "-o", (dir / "x.png").string()});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("SyntaxError") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "x.png"));

  r = cli({"--json", "render", (dir / "bad.uil").string(), "-o", (dir / "x.png").string()});
  CHECK(r.code == kExitDomainError);
  CHECK(nlohmann::json::parse(r.err)["code"] == "SyntaxError");

  r = cli({"render", layout_path.string(), "-o", (dir / "x.png").string(), "--width", "8"});
  CHECK(r.code == kExitDomainError);
}

TEST_CASE("step follows the demo graph") {
  TempDir dir;
  save_png(screen_image("home"), dir / "home.png");
  auto r = cli({"step", "--image", (dir / "home.png").string(), "--action", "open email app", "--predictor",
                "rule:" + demo_appgraph_path().string(), "--out-dir", dir.path().string()});
  CHECK(r.code == kExitOk);
  const auto inbox = demo_graph().screens.at("inbox");
  CHECK(r.out.rfind(serialize_layout(inbox), 0) == 0);
  CHECK(r.out.find("layout: " + (dir / "next.uil").string()) != std::string::npos);
  CHECK(r.out.find("image: " + (dir / "next.png").string()) != std::string::npos);
  CHECK(parse_layout(read_file_text(dir / "next.uil")).root == inbox.root);
  CHECK(load_png(dir / "next.png") == screen_image("inbox"));

  r = cli({"--json", "step", "--image", (dir / "next.png").string(), "--kind", "TAP", "--point", "0.5,0.18",
           "-a", "tap the first message", "--out-dir", dir.path().string(), "--name", "msg"});
  CHECK(r.code == kExitOk);
  const auto j = r.json();
  CHECK(parse_layout(j["layout_dsl"].get<std::string>()) == demo_graph().screens.at("message"));
  CHECK(j["image_sha256"] == sha256_hex(read_file_bytes(dir / "msg.png")));
  CHECK(j["backend_info"]["predictor"] == "rule:appgraph");

  r = cli({"step", "--image", (dir / "home.png").string(), "--action", "dance", "--out-dir", dir.path().string(),
           "--name", "nothing"});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("NoTransition") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "nothing.png"));

  r = cli({"step", "--image", (dir / "home.png").string(), "--kind", "TAP", "--action", "tap", "--out-dir",
           dir.path().string()});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("InvalidAction") != std::string::npos);
}

TEST_CASE("step against stub backends") {
  TempDir dir;
  StubBackend stub;
  save_png(screen_image("home"), dir / "home.png");
  auto r = cli({"--json", "step", "--image", (dir / "home.png").string(), "--action", "open settings",
                "--predictor", stub.url(), "--renderer", "remote:" + stub.url(), "--out-dir", dir.path().string()});
  CHECK(r.code == kExitOk);
  CHECK(load_png(dir / "next.png") == screen_image("settings"));
  CHECK(stub.predict_calls == 1);
  CHECK(stub.render_calls == 1);

  stub.on_predict(uisim::testing::reply_status(503));
  r = cli({"--json", "step", "--image", (dir / "home.png").string(), "--action", "open settings", "--predictor",
           stub.url(), "--out-dir", dir.path().string()});
  CHECK(r.code == kExitDomainError);
  const auto p = nlohmann::json::parse(r.err);
  CHECK(p["code"] == "BackendUnavailable");
  CHECK(p["stage"] == "layout");
}

TEST_CASE("session verbs") {
  TempDir dir;
  const auto store = dir / "store";
  save_png(screen_image("home"), dir / "home.png");
  auto r = cli(std::vector<std::string>{"session", "create", "--image", (dir / "home.png").string()} + small(store));
  REQUIRE(r.code == kExitOk);
  const std::string sid = r.out.substr(0, r.out.find('\n'));
  CHECK(valid_session_id(sid));

  r = cli(std::vector<std::string>{"session", "step", sid, "--action", "open email app"} + small(store));
  CHECK(r.code == kExitOk);
  CHECK(r.out == "1\n");
  r = cli(std::vector<std::string>{"--json", "session", "step", sid, "--node", "1", "--action", "compose"} +
          small(store));
  CHECK(r.code == kExitOk);
  CHECK(r.json()["node"]["parent"] == 1);

  r = cli(std::vector<std::string>{"rollout", "--session", sid, "--from", "2", "-a", "send", "-a", "back"} +
          small(store));
  CHECK(r.code == kExitOk);
  CHECK(r.out == "3\tsend\n4\tback\n");

  r = cli(std::vector<std::string>{"--json", "rollout", "--session", sid, "--actions-json",
                                   R"(["open settings", "dance", "wifi"])", "--continue-on-error"} +
          small(store));
  CHECK(r.code == kExitDomainError);
  const auto roll = r.json();
  CHECK(roll["created"] == nlohmann::json::array({5, 6}));
  CHECK(roll["failures"][0]["action_index"] == 1);

  write_file_atomic(dir / "acts.json", std::string_view(R"([{"text":"search"}])"));
  r = cli(std::vector<std::string>{"rollout", "--session", sid, "--actions-json", "@" + (dir / "acts.json").string()} +
          small(store));
  CHECK(r.code == kExitOk);

  r = cli(std::vector<std::string>{"session", "show", sid} + small(store));
  CHECK(r.code == kExitOk);
  CHECK(r.out.rfind("0", 0) == 0);
  CHECK(r.out.find("  1  open email app  [inbox]") != std::string::npos);
  CHECK(r.out.find("    2  compose  [compose]") != std::string::npos);

  r = cli(std::vector<std::string>{"--json", "session", "show", sid} + small(store));
  const auto manifest = r.json();
  CHECK(manifest["nodes"].size() == 8);
  CHECK(manifest == session_manifest(SessionStore(store).load(sid)));

  r = cli(std::vector<std::string>{"session", "layout", sid, "--node", "1"} + small(store));
  CHECK(r.out == serialize_layout(demo_graph().screens.at("inbox")));
  r = cli(std::vector<std::string>{"session", "image", sid, "--node", "6", "-o", (dir / "wifi.png").string()} +
          small(store));
  CHECK(r.code == kExitOk);
  CHECK(load_png(dir / "wifi.png") == screen_image("wifi"));

  r = cli(std::vector<std::string>{"session", "list"} + small(store));
  CHECK(r.out == sid + "\n");
  r = cli(std::vector<std::string>{"--json", "session", "list"} + small(store));
  CHECK(r.json()["sessions"][0]["node_count"] == 8);

  r = cli(std::vector<std::string>{"session", "show", "missing"} + small(store));
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("SessionNotFound") != std::string::npos);
  r = cli(std::vector<std::string>{"session", "layout", sid, "--node", "99"} + small(store));
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("NodeNotFound") != std::string::npos);
  r = cli(std::vector<std::string>{"rollout", "--session", sid} + small(store));
  CHECK(r.code == kExitUsage);
}

TEST_CASE("config file and environment reach the CLI") {
  TempDir dir;
  const auto store = dir / "from-config";
  write_file_atomic(dir / "c.toml", "[store]\ndir = \"" + store.string() + "\"\n[render]\nwidth = 108\nheight = 240\n");
  save_png(screen_image("home"), dir / "home.png");
  auto r = cli({"session", "create", "--image", (dir / "home.png").string(), "--config", (dir / "c.toml").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(SessionStore(store).list().size() == 1);

  ::setenv("UISIM_STORE_DIR", (dir / "from-env").c_str(), 1);
  r = cli({"session", "create", "--image", (dir / "home.png").string(), "--config", (dir / "c.toml").string()});
  CHECK(r.code == kExitOk);
  CHECK(SessionStore(dir / "from-env").list().size() == 1);
  r = cli({"session", "create", "--image", (dir / "home.png").string(), "--config", (dir / "c.toml").string(),
           "--store", (dir / "from-flag").string()});
  CHECK(r.code == kExitOk);
  CHECK(SessionStore(dir / "from-flag").list().size() == 1);
  ::unsetenv("UISIM_STORE_DIR");

  write_file_atomic(dir / "bad.toml", std::string_view("[render]\nwidth = 1\n"));
  r = cli({"session", "list", "--config", (dir / "bad.toml").string()});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("ConfigError") != std::string::npos);
}

TEST_CASE("API and CLI reach the same states") {
  TempDir dir;
  save_png(screen_image("home"), dir / "home.png");

  ServiceConfig cfg;
  cfg.port = 0;
  cfg.store_dir = dir / "api";
  cfg.width = kW;
  cfg.height = kH;
  Service svc(cfg);
  httplib::Client c("127.0.0.1", svc.start());
  c.set_read_timeout(30, 0);

  const auto png = read_file_bytes(dir / "home.png");
  auto res = c.Post("/v1/sessions", std::string(png.begin(), png.end()), "image/png");
  REQUIRE(res);
  const std::string api_sid = nlohmann::json::parse(res->body)["session_id"];
  res = c.Post("/v1/sessions/" + api_sid + "/nodes/0/step", R"({"action":"open email app"})", "application/json");
  REQUIRE(res);
  res = c.Post("/v1/sessions/" + api_sid + "/rollout",
               R"({"start_node":1,"actions":["compose","discard"],"stop_on_error":true})", "application/json");
  REQUIRE(res);
  res = c.Post("/v1/sessions/" + api_sid + "/nodes/0/step",
               R"({"action":{"text":"tap settings","kind":"TAP","point":[0.7,0.2]}})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);

  const auto store = dir / "cli";
  auto r = cli(std::vector<std::string>{"session", "create", "--image", (dir / "home.png").string()} + small(store));
  REQUIRE(r.code == kExitOk);
  const std::string cli_sid = r.out.substr(0, r.out.find('\n'));
  CHECK(cli(std::vector<std::string>{"session", "step", cli_sid, "-a", "open email app"} + small(store)).code == 0);
  CHECK(cli(std::vector<std::string>{"rollout", "--session", cli_sid, "--from", "1", "-a", "compose", "-a",
                                     "discard"} +
            small(store))
            .code == 0);
  CHECK(cli(std::vector<std::string>{"session", "step", cli_sid, "-a", "tap settings", "--kind", "TAP", "--point",
                                     "0.7,0.2"} +
            small(store))
            .code == 0);

  const auto api_manifest = nlohmann::json::parse(c.Get("/v1/sessions/" + api_sid)->body);
  const auto cli_manifest = cli(std::vector<std::string>{"--json", "session", "show", cli_sid} + small(store)).json();
  CHECK(api_manifest["nodes"].size() == 5);
  CHECK(normalized(api_manifest) == normalized(cli_manifest));

  // Each side reads the other's store.
  CHECK(cli(std::vector<std::string>{"--json", "session", "show", api_sid} + small(dir / "api")).json() ==
        api_manifest);
  svc.stop();
  cfg.store_dir = store;
  Service other(cfg);
  httplib::Client c2("127.0.0.1", other.start());
  CHECK(nlohmann::json::parse(c2.Get("/v1/sessions/" + cli_sid)->body) == cli_manifest);
}

TEST_CASE("fid verb") {
  TempDir dir;
  std::filesystem::create_directories(dir / "gen");
  std::filesystem::create_directories(dir / "ref");
  int i = 0;
  for (const auto& [id, l] : demo_graph().screens) {
    save_png(render(l, light_theme(), kW, kH), dir / "ref" / (id + ".png"));
    save_png(render(l, i++ % 2 ? dark_theme() : light_theme(), kW, kH), dir / "gen" / (id + ".png"));
  }
  auto r = cli({"fid", "--generated", (dir / "gen").string(), "--reference", (dir / "ref").string(), "-o",
                (dir / "cand.json").string()});
  REQUIRE(r.code == kExitOk);
  const auto report = r.json();
  CHECK(report["score"].get<double>() > 0);
  CHECK(report["extractor"]["name"] == "builtin-grid");
  CHECK(report["n_generated"] == demo_graph().screens.size());
  CHECK(nlohmann::json::parse(read_file_text(dir / "cand.json")) == report);

  r = cli({"fid", "--generated", (dir / "ref").string(), "--reference", (dir / "ref").string()});
  CHECK(r.json()["score"].get<double>() <= 1e-6);

  FidReport base = FidReport::from_json(report);
  base.score = report["score"].get<double>() + 10;
  write_file_atomic(dir / "base.json", base.to_json().dump());
  r = cli({"fid", "--compare", (dir / "base.json").string(), (dir / "cand.json").string()});
  CHECK(r.code == kExitOk);
  CHECK(std::abs(r.json()["improvement"].get<double>() - 10) < 1e-9);

  base.extractor_version = "other";
  write_file_atomic(dir / "other.json", base.to_json().dump());
  r = cli({"fid", "--compare", (dir / "other.json").string(), (dir / "cand.json").string()});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("IncomparableReports") != std::string::npos);

  StubBackend stub;
  r = cli({"fid", "--generated", (dir / "gen").string(), "--reference", (dir / "ref").string(), "--extractor",
           "remote", "--embedder", stub.url()});
  CHECK(r.code == kExitOk);
  CHECK(std::abs(r.json()["score"].get<double>() - report["score"].get<double>()) < 1e-9);

  r = cli({"fid", "--generated", (dir / "gen").string()});
  CHECK(r.code == kExitUsage);
}

TEST_CASE("dataset verbs") {
  TempDir dir;
  const auto eps = dir / "episodes";
  std::filesystem::create_directories(eps / "frames");
  const std::vector<std::pair<std::string, int>> spec = {{"ep-a", 2}, {"ep-b", 3}, {"ep-c", 4}};
  for (const auto& [id, pairs] : spec) {
    Episode ep;
    ep.episode_id = id;
    ep.goal_text = "goal";
    for (int k = 0; k <= pairs; ++k) {
      const std::string ref = "frames/" + id + "-" + std::to_string(k) + ".png";
      save_png(screen_image(k % 2 ? "inbox" : "home"), eps / ref);
      ep.frames.push_back({ref, true, static_cast<double>(k)});
      ep.frames.push_back({ref, false, k + 0.5});
    }
    write_file_atomic(eps / (id + ".json"), ep.to_json().dump());
  }

  auto r = cli({"dataset", "extract", "--episodes", eps.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "ep-a\t2\nep-b\t3\nep-c\t4\ntotal\t9\n");

  StubBackend stub;
  ::setenv("UISIM_ANNOTATOR_TOKEN", "secret", 1);
  r = cli({"dataset", "annotate", "--episodes", eps.string(), "--action-annotator", stub.url(),
           "--layout-annotator", stub.url(), "-o", (dir / "all.jsonl").string(), "--backoff-ms", "1"});
  ::unsetenv("UISIM_ANNOTATOR_TOKEN");
  CHECK(r.code == kExitOk);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
  const auto text = read_file_text(dir / "all.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 9);

  r = cli({"--json", "dataset", "build", "--episodes", eps.string(), "--action-annotator", stub.url(),
           "--layout-annotator", stub.url(), "--train-target", "5", "--seed", "3", "-o", (dir / "ds").string(),
           "--backoff-ms", "1"});
  CHECK(r.code == kExitOk);
  const auto m = r.json();
  CHECK(m["totals"]["train"] == 5);
  CHECK(m["totals"]["eval"] == 4);
  CHECK(m["seed"] == 3);

  r = cli({"dataset", "validate", (dir / "ds" / "manifest.json").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.rfind("ok: 9 examples = 5 train + 4 eval", 0) == 0);

  auto broken = nlohmann::json::parse(read_file_text(dir / "ds" / "manifest.json"));
  broken["totals"]["eval"] = 3;
  write_file_atomic(dir / "broken.json", broken.dump());
  r = cli({"dataset", "validate", (dir / "broken.json").string()});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("ConfigError") != std::string::npos);

  r = cli({"dataset", "build", "--episodes", eps.string(), "--action-annotator", stub.url(), "--layout-annotator",
           stub.url(), "--train-target", "10", "-o", (dir / "ds2").string()});
  CHECK(r.code == kExitDomainError);
  CHECK(r.err.find("ConfigError") != std::string::npos);

  stub.on_annotate_layout(uisim::testing::reply_status(400));
  r = cli({"dataset", "annotate", "--episodes", eps.string(), "--action-annotator", stub.url(),
           "--layout-annotator", stub.url(), "-o", (dir / "none.jsonl").string(), "--backoff-ms", "1"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("0 examples, 9 skipped of 9 pairs") != std::string::npos);
  CHECK(r.err.find("ep-a") != std::string::npos);
}
