#include <doctest.h>

#include <algorithm>
#include <mutex>
#include <set>
#include <thread>

#include "generators.hpp"
#include "stub_backend.hpp"
#include "test_util.hpp"
#include "uisim/codec.hpp"
#include "uisim/dataset.hpp"
#include "uisim/raster.hpp"

using namespace uisim;
using uisim::testing::error_code_of;
using uisim::testing::StubBackend;
using uisim::testing::StubReply;
using uisim::testing::TempDir;

namespace {

Image solid(std::uint8_t shade) {
  Image img;
  img.width = 16;
  img.height = 16;
  img.pixels.assign(16 * 16 * 3, shade);
  return img;
}

// Writes an episode whose keypoint flags are `keys` and returns it.
Episode write_episode(const std::filesystem::path& dir, const std::string& id,
                      const std::vector<bool>& keys) {
  std::filesystem::create_directories(dir / id);
  Episode ep;
  ep.episode_id = id;
  ep.goal_text = "goal of " + id;
  ep.base_dir = dir;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string ref = id + "/" + std::to_string(i) + ".png";
    save_png(solid(static_cast<std::uint8_t>(10 * i)), dir / ref);
    ep.frames.push_back({ref, keys[i], static_cast<double>(i)});
  }
  write_file_atomic(dir / (id + ".json"), ep.to_json().dump(2));
  return ep;
}

Episode keypoint_episode(const std::filesystem::path& dir, const std::string& id, std::size_t pairs) {
  return write_episode(dir, id, std::vector<bool>(pairs + 1, true));
}

Episode memory_episode(const std::vector<bool>& keys) {
  Episode ep;
  ep.episode_id = "m";
  for (std::size_t i = 0; i < keys.size(); ++i) ep.frames.push_back({"f" + std::to_string(i), keys[i], 0});
  return ep;
}

struct FixedAction final : ActionAnnotator {
  std::string text = "tap next";
  Annotation annotate_action(const Image&, const Image&, const std::string&) const override {
    return {text, "local-action"};
  }
};

struct FixedLayout final : LayoutAnnotator {
  std::string dsl = "CONTAINER root (0,0,1,1)\n  BUTTON next 'Next' (0.1,0.8,0.9,0.9)\n";
  Annotation annotate_layout(const Image&) const override { return {dsl, "local-layout"}; }
};

// Rejects frames whose first pixel has the given shade.
struct PickyLayout final : LayoutAnnotator {
  std::set<std::uint8_t> bad_shades;
  Annotation annotate_layout(const Image& frame) const override {
    if (bad_shades.count(frame.pixels[0])) return {"NOT A LAYOUT (", "picky"};
    return {"CONTAINER root (0,0,1,1)\n", "picky"};
  }
};

RetryPolicy fast_retry(int retries = 3) { return {retries, std::chrono::milliseconds(1), 2.0}; }

LogSink quiet() {
  return [](const std::string&) {};
}

// Independent split oracle: replay the seeded shuffle, enumerate all subsets.
std::set<std::string> oracle_train(std::vector<EpisodeCount> counts, std::size_t target,
                                   std::uint64_t seed) {
  std::sort(counts.begin(), counts.end(),
            [](const auto& a, const auto& b) { return a.episode_id < b.episode_id; });
  std::mt19937_64 rng(seed);
  for (std::size_t i = counts.size(); i > 1; --i) std::swap(counts[i - 1], counts[rng() % i]);
  const std::size_t n = counts.size();
  std::size_t best_sum = 0;
  std::vector<bool> best(n, false);
  bool have = false;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    std::size_t sum = 0;
    bool uses_empty = false;
    std::vector<bool> pick(n);
    for (std::size_t k = 0; k < n; ++k) {
      pick[k] = (mask >> k) & 1;
      if (pick[k]) {
        sum += counts[k].examples;
        uses_empty = uses_empty || counts[k].examples == 0;
      }
    }
    if (sum > target || uses_empty) continue;
    // Larger sum wins; ties go to the pick that takes earlier episodes.
    if (!have || sum > best_sum || (sum == best_sum && pick > best)) {
      best_sum = sum;
      best = pick;
      have = true;
    }
  }
  std::set<std::string> out;
  for (std::size_t k = 0; k < n; ++k)
    if (best[k]) out.insert(counts[k].episode_id);
  return out;
}

std::set<std::string> jsonl_episodes(const std::filesystem::path& path) {
  std::set<std::string> out;
  std::istringstream in(read_file_text(path));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.insert(nlohmann::json::parse(line)["episode_id"].get<std::string>());
  return out;
}

std::size_t jsonl_lines(const std::filesystem::path& path) {
  const auto text = read_file_text(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("pair extraction") {
  const auto pairs = extract_pairs(memory_episode(
      {false, false, true, false, false, true, false, false, false, true}));
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == FramePair{0, "f2", "f5"});
  CHECK(pairs[1] == FramePair{1, "f5", "f9"});
  CHECK(extract_pairs(memory_episode({false, false})).empty());
  CHECK(extract_pairs(memory_episode({false, true, false})).empty());

  const auto ten = extract_pairs(memory_episode(std::vector<bool>(10, true)));
  CHECK(ten.size() == 9);
  for (std::size_t i = 1; i < ten.size(); ++i) {
    CHECK(std::stoi(ten[i].initial_frame_ref.substr(1)) > std::stoi(ten[i - 1].initial_frame_ref.substr(1)));
    CHECK(ten[i].initial_frame_ref == ten[i - 1].next_frame_ref);
  }

  uisim::testing::Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<bool> keys(1 + rng() % 30);
    std::size_t k = 0;
    for (std::size_t j = 0; j < keys.size(); ++j) k += (keys[j] = rng() % 3 == 0);
    CHECK(extract_pairs(memory_episode(keys)).size() == (k == 0 ? 0 : k - 1));
  }
}

TEST_CASE("episode manifests") {
  TempDir dir;
  const auto ep = write_episode(dir.path(), "ep-b", {true, false, true});
  write_episode(dir.path(), "ep-a", {true, true});
  const auto loaded = load_episode(dir / "ep-b.json");
  CHECK(loaded.episode_id == "ep-b");
  CHECK(loaded.goal_text == "goal of ep-b");
  CHECK(loaded.frames.size() == 3);
  CHECK(loaded.frames[1].is_keypoint == false);
  CHECK(loaded.resolve(loaded.frames[0].frame_ref) == dir.path() / "ep-b/0.png");
  const auto all = load_episodes(dir.path());
  REQUIRE(all.size() == 2);
  CHECK(all[0].episode_id == "ep-a");

  CHECK(error_code_of([] { memory_episode({}).validate(); }) == ErrorCode::kConfigError);
  Episode anon = memory_episode({true});
  anon.episode_id.clear();
  CHECK(error_code_of([&] { anon.validate(); }) == ErrorCode::kConfigError);
  CHECK(error_code_of([&] { Episode::from_json({{"episode_id", "x"}}, dir.path()); }) ==
        ErrorCode::kConfigError);
  write_file_atomic(dir / "broken.json", std::string_view("{"));
  CHECK(error_code_of([&] { load_episodes(dir.path()); }) == ErrorCode::kConfigError);
  CHECK(error_code_of([&] { load_episodes(dir / "missing"); }) == ErrorCode::kConfigError);
}

TEST_CASE("annotate a pair with stub annotators") {
  TempDir dir;
  const auto ep = keypoint_episode(dir.path(), "ep", 1);
  StubBackend stub;
  nlohmann::json seen;
  std::mutex mu;
  stub.on_annotate_action([&](const nlohmann::json& req) {
    std::lock_guard lock(mu);
    seen = req;
    return StubReply::json({{"action_text", "open the inbox"}, {"version", "act-7"}});
  });
  RemoteActionAnnotator act(stub.url(), std::chrono::seconds(5), fast_retry());
  RemoteLayoutAnnotator lay(stub.url(), std::chrono::seconds(5), fast_retry());

  const auto ex = annotate_pair(act, lay, ep, extract_pairs(ep)[0]);
  CHECK(ex.action_text == "open the inbox");
  CHECK(ex.example_id == example_id_for("ep", 0));
  CHECK(ex.episode_id == "ep");
  CHECK(ex.pair_index == 0);
  CHECK(ex.initial_frame_ref == "ep/0.png");
  CHECK(ex.next_layout ==
        parse_layout("CONTAINER root (0,0,1,1)\n  BUTTON next 'Next' (0.1,0.8,0.9,0.9)\n"));
  CHECK(ex.annotator_versions.at("action") == "act-7");
  CHECK(ex.annotator_versions.at("layout") == "stub-layout-1");
  {
    std::lock_guard lock(mu);
    CHECK(seen["goal_text"] == "goal of ep");
    CHECK(decode_png(base64_decode(seen["first_png_base64"].get<std::string>())) == solid(0));
    CHECK(decode_png(base64_decode(seen["second_png_base64"].get<std::string>())) == solid(10));
  }

  const auto j = ex.to_json();
  for (const char* key : {"example_id", "episode_id", "pair_index", "initial_frame", "action_text",
                          "next_layout_dsl", "annotator_versions"})
    CHECK(j.contains(key));
  CHECK(j.size() == 7);
  const auto back = TrainingExample::from_json(j);
  CHECK(back.to_json() == j);
}

TEST_CASE("annotation failures") {
  TempDir dir;
  const auto ep = keypoint_episode(dir.path(), "ep", 1);
  const auto pair = extract_pairs(ep)[0];
  StubBackend stub;
  RemoteActionAnnotator act(stub.url(), std::chrono::seconds(5), fast_retry());
  RemoteLayoutAnnotator lay(stub.url(), std::chrono::seconds(5), fast_retry());

  stub.on_annotate_layout(uisim::testing::reply_text(R"({"layout_dsl":"BUTTON ((("})"));
  CHECK(error_code_of([&] { annotate_pair(act, lay, ep, pair); }) == ErrorCode::kInvalidAnnotation);
  stub.on_annotate_layout(uisim::testing::reply_text(R"({"nothing":1})"));
  CHECK(error_code_of([&] { annotate_pair(act, lay, ep, pair); }) == ErrorCode::kInvalidAnnotation);
  stub.on_annotate_layout(uisim::testing::reply_text("plain text"));
  CHECK(error_code_of([&] { annotate_pair(act, lay, ep, pair); }) == ErrorCode::kInvalidAnnotation);

  stub.on_annotate_layout(uisim::testing::reply_text(
      R"({"elements":[{"element_class":"BUTTON","name":"ok","text_content":"OK","bbox":{"x0":0.1,"y0":0.1,"x1":0.5,"y1":0.2}}],"version":"flat"})"));
  const auto flat = annotate_pair(act, lay, ep, pair);
  CHECK(element_count(flat.next_layout) == 2);
  CHECK(flat.annotator_versions.at("layout") == "flat");

  stub.on_annotate_action(uisim::testing::reply_text(R"({"action_text":""})"));
  CHECK(error_code_of([&] { annotate_pair(act, lay, ep, pair); }) == ErrorCode::kInvalidAnnotation);

  Episode missing = ep;
  missing.frames[1].frame_ref = "ep/none.png";
  FixedAction fa;
  FixedLayout fl;
  CHECK(error_code_of([&] { annotate_pair(fa, fl, missing, extract_pairs(missing)[0]); }) ==
        ErrorCode::kInvalidImage);
}

TEST_CASE("retries with backoff") {
  TempDir dir;
  const auto ep = keypoint_episode(dir.path(), "ep", 1);
  const auto pair = extract_pairs(ep)[0];
  StubBackend stub;
  RemoteLayoutAnnotator lay(stub.url(), std::chrono::seconds(5), fast_retry(3));
  FixedAction fa;

  stub.on_annotate_layout(uisim::testing::fail_first(
      2, 429, [](const nlohmann::json&) { return StubReply::json({{"layout_dsl", "CONTAINER root (0,0,1,1)"}}); }));
  CHECK_NOTHROW(annotate_pair(fa, lay, ep, pair));
  CHECK(stub.layout_calls == 3);

  stub.reset_counters();
  stub.on_annotate_layout(uisim::testing::reply_status(503));
  CHECK(error_code_of([&] { annotate_pair(fa, lay, ep, pair); }) == ErrorCode::kAnnotatorUnavailable);
  CHECK(stub.layout_calls == 4);

  stub.reset_counters();
  stub.on_annotate_layout(uisim::testing::reply_status(400));
  CHECK(error_code_of([&] { annotate_pair(fa, lay, ep, pair); }) == ErrorCode::kAnnotatorUnavailable);
  CHECK(stub.layout_calls == 1);

  RemoteLayoutAnnotator dead("http://127.0.0.1:1", std::chrono::milliseconds(300), fast_retry(1));
  CHECK(error_code_of([&] { annotate_pair(fa, dead, ep, pair); }) == ErrorCode::kAnnotatorUnavailable);
}

TEST_CASE("skips are logged and counted") {
  TempDir dir;
  std::vector<Episode> eps;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    eps.push_back(keypoint_episode(dir.path(), "ep" + std::to_string(i), i));
    pairs += i;
  }
  FixedAction fa;
  PickyLayout picky;
  picky.bad_shades = {20, 40};
  std::vector<std::string> lines;
  std::mutex mu;
  const auto r = annotate_episodes(eps, fa, picky, 3, [&](const std::string& l) {
    std::lock_guard lock(mu);
    lines.push_back(l);
  });
  CHECK(r.total_pairs == pairs);
  CHECK(r.examples.size() + r.skips.size() == pairs);
  CHECK(!r.skips.empty());
  std::set<std::pair<std::string, std::size_t>> emitted, skipped;
  for (const auto& ex : r.examples) emitted.insert({ex.episode_id, ex.pair_index});
  for (const auto& s : r.skips) {
    CHECK(s.code == "InvalidAnnotation");
    skipped.insert({s.episode_id, s.pair_index});
    const bool logged = std::any_of(lines.begin(), lines.end(), [&](const std::string& l) {
      return l.find(s.episode_id) != std::string::npos;
    });
    CHECK(logged);
  }
  for (const auto& k : skipped) CHECK(emitted.count(k) == 0);
  CHECK(emitted.size() == r.examples.size());
  CHECK(std::is_sorted(r.examples.begin(), r.examples.end(), [](const auto& a, const auto& b) {
    return std::tie(a.episode_id, a.pair_index) < std::tie(b.episode_id, b.pair_index);
  }));
}

TEST_CASE("in-flight annotation requests are bounded") {
  TempDir dir;
  std::vector<Episode> eps;
  for (int i = 0; i < 4; ++i) eps.push_back(keypoint_episode(dir.path(), "ep" + std::to_string(i), 3));
  StubBackend stub;
  std::atomic<int> now{0}, peak{0};
  stub.on_annotate_action([&](const nlohmann::json&) {
    const int cur = ++now;
    int p = peak;
    while (cur > p && !peak.compare_exchange_weak(p, cur)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --now;
    return StubReply::json({{"action_text", "go"}});
  });
  RemoteActionAnnotator act(stub.url(), std::chrono::seconds(5), fast_retry());
  FixedLayout fl;
  const auto r = annotate_episodes(eps, act, fl, 2, quiet());
  CHECK(r.examples.size() == 12);
  CHECK(peak <= 2);
  CHECK(peak >= 1);
}

TEST_CASE("split of 2+3+4 examples with target 5") {
  TempDir dir;
  const std::vector<Episode> eps = {keypoint_episode(dir.path(), "a", 2),
                                    keypoint_episode(dir.path(), "b", 3),
                                    keypoint_episode(dir.path(), "c", 4)};
  FixedAction fa;
  FixedLayout fl;
  for (std::uint64_t seed : {1u, 7u, 42u}) {
    CAPTURE(seed);
    const auto out = dir / ("out" + std::to_string(seed));
    const auto m = build_dataset(eps, fa, fl, {5, seed, out, 2}, quiet());
    // {2,3} is the only subset summing to 5.
    CHECK(std::set<std::string>(m.train_episodes.begin(), m.train_episodes.end()) ==
          std::set<std::string>{"a", "b"});
    CHECK(m.eval_episodes == std::vector<std::string>{"c"});
    CHECK(m.train_examples == 5);
    CHECK(m.eval_examples == 4);
    CHECK(m.total_examples == 9);
    CHECK(m.target_delta() == 0);
    CHECK(m.seed == seed);
    CHECK(jsonl_lines(out / "train.jsonl") == 5);
    CHECK(jsonl_lines(out / "eval.jsonl") == 4);
    CHECK(DatasetManifest::from_json(nlohmann::json::parse(read_file_text(out / "manifest.json"))).to_json() ==
          m.to_json());
  }
}

TEST_CASE("split matches the subset oracle") {
  uisim::testing::Rng rng(11);
  for (int t = 0; t < 300; ++t) {
    std::vector<EpisodeCount> counts;
    const std::size_t n = 1 + rng() % 10;
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      counts.push_back({"e" + std::to_string(rng() % 1000) + "_" + std::to_string(i), rng() % 9});
      total += counts.back().examples;
    }
    const std::size_t target = total == 0 ? 0 : rng() % (total + 1);
    const std::uint64_t seed = rng();
    const auto got = select_train_episodes(counts, target, seed);
    CAPTURE(t);
    CHECK(std::set<std::string>(got.begin(), got.end()) == oracle_train(counts, target, seed));
    CHECK(got == select_train_episodes(counts, target, seed));
    std::reverse(counts.begin(), counts.end());
    CHECK(got == select_train_episodes(counts, target, seed));
  }
}

TEST_CASE("build is deterministic and episode-atomic") {
  TempDir dir;
  uisim::testing::Rng rng(21);
  std::vector<Episode> eps;
  std::size_t pairs = 0;
  for (int i = 0; i < 12; ++i) {
    std::vector<bool> keys(2 + rng() % 8);
    for (std::size_t j = 0; j < keys.size(); ++j) keys[j] = rng() % 4 != 0;
    eps.push_back(write_episode(dir.path(), "ep" + std::to_string(100 + i), keys));
    pairs += extract_pairs(eps.back()).size();
  }
  FixedAction fa;
  PickyLayout picky;
  picky.bad_shades = {30};
  const std::size_t target = pairs / 2;
  const auto a = build_dataset(eps, fa, picky, {target, 9, dir / "a", 4}, quiet());
  const auto b = build_dataset(eps, fa, picky, {target, 9, dir / "b", 1}, quiet());
  for (const char* f : {"train.jsonl", "eval.jsonl", "manifest.json"})
    CHECK(read_file_bytes(dir / "a" / f) == read_file_bytes(dir / "b" / f));
  CHECK(a.total_pairs == pairs);
  CHECK(a.total_examples + a.skipped == pairs);
  CHECK_NOTHROW(validate_manifest(a));

  const auto train = jsonl_episodes(dir / "a" / "train.jsonl");
  const auto eval = jsonl_episodes(dir / "a" / "eval.jsonl");
  for (const auto& id : train) CHECK(eval.count(id) == 0);
  CHECK(jsonl_lines(dir / "a" / "train.jsonl") == a.train_examples);
  CHECK(jsonl_lines(dir / "a" / "eval.jsonl") == a.eval_examples);

  std::set<std::pair<std::string, std::size_t>> keys;
  for (const auto& f : {"train.jsonl", "eval.jsonl"}) {
    std::istringstream in(read_file_text(dir / "a" / f));
    for (std::string line; std::getline(in, line);) {
      const auto ex = TrainingExample::from_json(nlohmann::json::parse(line));
      CHECK(keys.insert({ex.episode_id, ex.pair_index}).second);
      CHECK_FALSE(ex.action_text.empty());
    }
  }

  const auto c = build_dataset(eps, fa, picky, {target, 10, dir / "c", 4}, quiet());
  CHECK(c.total_examples == a.total_examples);
}

TEST_CASE("target limits") {
  TempDir dir;
  const std::vector<Episode> eps = {keypoint_episode(dir.path(), "a", 2), keypoint_episode(dir.path(), "b", 3)};
  FixedAction fa;
  FixedLayout fl;
  std::vector<std::string> lines;
  const auto full = build_dataset(eps, fa, fl, {5, 1, dir / "full", 4},
                                  [&](const std::string& l) { lines.push_back(l); });
  CHECK(full.eval_examples == 0);
  CHECK(read_file_text(dir / "full" / "eval.jsonl").empty());
  REQUIRE(full.warnings.size() == 1);
  CHECK(full.warnings[0].find("eval split is empty") != std::string::npos);
  CHECK(std::any_of(lines.begin(), lines.end(),
                    [](const std::string& l) { return l.find("warning") != std::string::npos; }));

  CHECK(error_code_of([&] { build_dataset(eps, fa, fl, {6, 1, dir / "x", 4}, quiet()); }) ==
        ErrorCode::kConfigError);
  CHECK(error_code_of([&] { build_dataset({}, fa, fl, {0, 1, dir / "x", 4}, quiet()); }) ==
        ErrorCode::kConfigError);
  CHECK(error_code_of([&] { build_dataset({eps[0], eps[0]}, fa, fl, {1, 1, dir / "x", 4}, quiet()); }) ==
        ErrorCode::kConfigError);

  PickyLayout picky;
  picky.bad_shades = {10, 20};
  CHECK(error_code_of([&] { build_dataset(eps, fa, picky, {5, 1, dir / "y", 4}, quiet()); }) ==
        ErrorCode::kConfigError);

  const auto short_split = build_dataset(eps, fa, fl, {4, 1, dir / "z", 4}, quiet());
  CHECK(short_split.train_examples == 3);
  CHECK(short_split.target_delta() == -1);
}

TEST_CASE("paper-scale manifest arithmetic") {
  DatasetManifest m;
  m.seed = 0;
  m.train_target = 27306;
  m.total_pairs = 28306;
  m.total_examples = 28306;
  m.train_examples = 27306;
  m.eval_examples = 1000;
  CHECK_NOTHROW(validate_manifest(m));
  CHECK(m.target_delta() == 0);
  CHECK(m.total_examples - m.train_examples == 1000);
  const auto j = m.to_json();
  CHECK(j["totals"]["examples"] == 28306);
  CHECK(j["totals"]["train"] == 27306);
  CHECK(j["totals"]["eval"] == 1000);
  CHECK_NOTHROW(validate_manifest(DatasetManifest::from_json(j)));

  auto bad = m;
  bad.eval_examples = 999;
  CHECK(error_code_of([&] { validate_manifest(bad); }) == ErrorCode::kConfigError);
  bad = m;
  bad.total_pairs = 28307;
  CHECK(error_code_of([&] { validate_manifest(bad); }) == ErrorCode::kConfigError);
  bad = m;
  bad.train_target = 27305;
  CHECK(error_code_of([&] { validate_manifest(bad); }) == ErrorCode::kConfigError);
  bad = m;
  bad.train_episodes = {"x"};
  bad.eval_episodes = {"x"};
  CHECK(error_code_of([&] { validate_manifest(bad); }) == ErrorCode::kConfigError);

  auto tampered = j;
  tampered["target_delta"] = 5;
  CHECK(error_code_of([&] { DatasetManifest::from_json(tampered); }) == ErrorCode::kConfigError);
  CHECK(error_code_of([] { DatasetManifest::from_json({{"seed", 1}}); }) == ErrorCode::kConfigError);
}
