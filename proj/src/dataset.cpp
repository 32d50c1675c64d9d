#include "uisim/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "uisim/codec.hpp"
#include "uisim/error.hpp"

namespace uisim {
namespace {

Error config_error(const std::string& msg) { return Error(ErrorCode::kConfigError, msg); }

bool retryable(int status) { return status == 429 || status >= 500; }

nlohmann::json skip_to_json(const SkipRecord& s) {
  return {{"episode_id", s.episode_id},
          {"pair_index", s.pair_index},
          {"code", s.code},
          {"message", s.message}};
}

void write_jsonl(const std::filesystem::path& path, const std::vector<const TrainingExample*>& rows) {
  std::string out;
  for (const auto* ex : rows) {
    out += ex->to_json().dump();
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

}  // namespace

// ---------------------------------------------------------------------------
// Episodes

void Episode::validate() const {
  if (episode_id.empty()) throw config_error("episode without episode_id");
  if (frames.empty()) throw config_error("episode " + episode_id + " has no frames");
  for (const auto& f : frames)
    if (f.frame_ref.empty()) throw config_error("episode " + episode_id + " has an empty frame ref");
}

Episode Episode::from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
  Episode e;
  try {
    e.episode_id = j.at("episode_id").get<std::string>();
    e.goal_text = j.value("goal_text", "");
    for (const auto& fj : j.at("frames")) {
      FrameRecord f;
      f.frame_ref = fj.at("frame").get<std::string>();
      f.is_keypoint = fj.value("is_keypoint", false);
      f.timestamp = fj.value("timestamp", 0.0);
      e.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw config_error(std::string("malformed episode manifest: ") + ex.what());
  }
  e.base_dir = std::move(base_dir);
  e.validate();
  return e;
}

nlohmann::json Episode::to_json() const {
  nlohmann::json frames_j = nlohmann::json::array();
  for (const auto& f : frames)
    frames_j.push_back({{"frame", f.frame_ref}, {"is_keypoint", f.is_keypoint}, {"timestamp", f.timestamp}});
  return {{"episode_id", episode_id}, {"goal_text", goal_text}, {"frames", std::move(frames_j)}};
}

Episode load_episode(const std::filesystem::path& manifest_path) {
  std::string text;
  try {
    text = read_file_text(manifest_path);
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw config_error("episode manifest is not JSON: " + manifest_path.string());
  return Episode::from_json(j, manifest_path.parent_path());
}

std::vector<Episode> load_episodes(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw config_error("not a directory: " + dir.string());
  std::vector<Episode> episodes;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      episodes.push_back(load_episode(entry.path()));
  std::sort(episodes.begin(), episodes.end(),
            [](const Episode& a, const Episode& b) { return a.episode_id < b.episode_id; });
  for (std::size_t i = 1; i < episodes.size(); ++i)
    if (episodes[i].episode_id == episodes[i - 1].episode_id)
      throw config_error("duplicate episode_id " + episodes[i].episode_id);
  return episodes;
}

std::vector<FramePair> extract_pairs(const Episode& episode) {
  std::vector<FramePair> pairs;
  const FrameRecord* prev = nullptr;
  for (const auto& f : episode.frames) {
    if (!f.is_keypoint) continue;
    if (prev != nullptr) pairs.push_back({pairs.size(), prev->frame_ref, f.frame_ref});
    prev = &f;
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Annotators

RemoteAnnotatorBase::RemoteAnnotatorBase(const std::string& base_url,
                                         std::chrono::milliseconds timeout, RetryPolicy retry,
                                         const std::string& token)
    : client_(base_url, timeout,
              token.empty() ? std::map<std::string, std::string>{}
                            : std::map<std::string, std::string>{{"Authorization", "Bearer " + token}}),
      retry_(retry) {}

nlohmann::json RemoteAnnotatorBase::call(const std::string& path, const nlohmann::json& body) const {
  auto backoff = retry_.initial_backoff;
  std::string last_failure;
  for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * retry_.multiplier));
    }
    const auto res = client_.post(path, body);
    if (!res) {
      last_failure = "unreachable";
      continue;
    }
    if (res->status == 200) {
      if (!res->json.is_object())
        throw Error(ErrorCode::kInvalidAnnotation, "annotator returned non-JSON body", res->body);
      return res->json;
    }
    last_failure = "HTTP " + std::to_string(res->status);
    if (!retryable(res->status)) break;
  }
  throw Error(ErrorCode::kAnnotatorUnavailable,
              "annotator " + client_.base_url() + path + " failed: " + last_failure);
}

std::string RemoteAnnotatorBase::version_of(const nlohmann::json& response) const {
  if (response.contains("version") && response["version"].is_string())
    return response["version"].get<std::string>();
  return "remote:" + client_.base_url();
}

RemoteActionAnnotator::RemoteActionAnnotator(const std::string& base_url,
                                             std::chrono::milliseconds timeout, RetryPolicy retry,
                                             const std::string& token)
    : RemoteAnnotatorBase(base_url, timeout, retry, token) {}

Annotation RemoteActionAnnotator::annotate_action(const Image& first, const Image& second,
                                                  const std::string& goal_text) const {
  const auto res = call("/v1/annotate_action", {{"first_png_base64", base64_encode(encode_png(first))},
                                                {"second_png_base64", base64_encode(encode_png(second))},
                                                {"goal_text", goal_text}});
  if (!res.contains("action_text") || !res["action_text"].is_string())
    throw Error(ErrorCode::kInvalidAnnotation, "action annotator response lacks action_text", res.dump());
  return {res["action_text"].get<std::string>(), version_of(res)};
}

RemoteLayoutAnnotator::RemoteLayoutAnnotator(const std::string& base_url,
                                             std::chrono::milliseconds timeout, RetryPolicy retry,
                                             const std::string& token)
    : RemoteAnnotatorBase(base_url, timeout, retry, token) {}

Annotation RemoteLayoutAnnotator::annotate_layout(const Image& frame) const {
  const auto res = call("/v1/annotate_layout", {{"image_png_base64", base64_encode(encode_png(frame))}});
  if (res.contains("layout_dsl") && res["layout_dsl"].is_string())
    return {res["layout_dsl"].get<std::string>(), version_of(res)};
  if (res.contains("elements") && res["elements"].is_array()) {
    try {
      return {serialize_layout(layout_from_flat_json(res["elements"])), version_of(res)};
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidAnnotation, std::string("layout annotation rejected: ") + e.what(),
                  res.dump());
    }
  }
  throw Error(ErrorCode::kInvalidAnnotation, "layout annotator response lacks layout_dsl", res.dump());
}

// ---------------------------------------------------------------------------
// Examples

std::string example_id_for(const std::string& episode_id, std::size_t pair_index) {
  return episode_id + "#" + std::to_string(pair_index);
}

nlohmann::json TrainingExample::to_json() const {
  return {{"example_id", example_id},
          {"episode_id", episode_id},
          {"pair_index", pair_index},
          {"initial_frame", initial_frame_ref},
          {"action_text", action_text},
          {"next_layout_dsl", serialize_layout(next_layout)},
          {"annotator_versions", annotator_versions}};
}

TrainingExample TrainingExample::from_json(const nlohmann::json& j) {
  TrainingExample ex;
  ex.example_id = j.at("example_id").get<std::string>();
  ex.episode_id = j.at("episode_id").get<std::string>();
  ex.pair_index = j.at("pair_index").get<std::size_t>();
  ex.initial_frame_ref = j.at("initial_frame").get<std::string>();
  ex.action_text = j.at("action_text").get<std::string>();
  ex.next_layout = parse_layout(j.at("next_layout_dsl").get<std::string>());
  ex.annotator_versions = j.at("annotator_versions").get<std::map<std::string, std::string>>();
  return ex;
}

TrainingExample annotate_pair(const ActionAnnotator& action_annotator,
                              const LayoutAnnotator& layout_annotator, const Episode& episode,
                              const FramePair& pair) {
  const Image first = load_png(episode.resolve(pair.initial_frame_ref));
  const Image second = load_png(episode.resolve(pair.next_frame_ref));

  const Annotation action = action_annotator.annotate_action(first, second, episode.goal_text);
  if (action.text.empty())
    throw Error(ErrorCode::kInvalidAnnotation, "action annotator returned empty text");
  const Annotation layout = layout_annotator.annotate_layout(second);

  TrainingExample ex;
  try {
    ex.next_layout = parse_layout(layout.text);
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidAnnotation, std::string("layout annotation rejected: ") + e.what(),
                layout.text);
  }
  ex.example_id = example_id_for(episode.episode_id, pair.pair_index);
  ex.episode_id = episode.episode_id;
  ex.pair_index = pair.pair_index;
  ex.initial_frame_ref = pair.initial_frame_ref;
  ex.action_text = action.text;
  ex.annotator_versions = {{"action", action.version}, {"layout", layout.version}};
  return ex;
}

LogSink stderr_log_sink() {
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

AnnotatedPairs annotate_episodes(const std::vector<Episode>& episodes,
                                 const ActionAnnotator& action_annotator,
                                 const LayoutAnnotator& layout_annotator, std::size_t max_in_flight,
                                 const LogSink& log) {
  struct Job {
    const Episode* episode;
    FramePair pair;
  };
  std::vector<Job> jobs;
  for (const auto& ep : episodes)
    for (auto& p : extract_pairs(ep)) jobs.push_back({&ep, std::move(p)});

  std::vector<std::optional<TrainingExample>> results(jobs.size());
  std::vector<std::optional<SkipRecord>> skips(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      try {
        results[i] = annotate_pair(action_annotator, layout_annotator, *job.episode, job.pair);
      } catch (const Error& e) {
        skips[i] = SkipRecord{job.episode->episode_id, job.pair.pair_index,
                              std::string(e.code_name()), e.what()};
      } catch (const std::exception& e) {
        skips[i] = SkipRecord{job.episode->episode_id, job.pair.pair_index, "InternalError", e.what()};
      }
      if (skips[i] && log) {
        std::lock_guard lock(log_mu);
        log("[dataset] skipped " + example_id_for(skips[i]->episode_id, skips[i]->pair_index) +
            ": " + skips[i]->code + ": " + skips[i]->message);
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(max_in_flight, 1, std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  AnnotatedPairs out;
  out.total_pairs = jobs.size();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (results[i]) out.examples.push_back(std::move(*results[i]));
    if (skips[i]) out.skips.push_back(std::move(*skips[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

std::vector<std::string> select_train_episodes(std::vector<EpisodeCount> counts,
                                               std::size_t train_target, std::uint64_t seed) {
  std::sort(counts.begin(), counts.end(),
            [](const EpisodeCount& a, const EpisodeCount& b) { return a.episode_id < b.episode_id; });
  // Explicit Fisher-Yates so the order does not depend on the standard
  // library's distribution implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = counts.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(counts[i - 1], counts[j]);
  }

  // reach[k] bit s: some subset of counts[k..] sums to exactly s.
  const std::size_t n = counts.size();
  const std::size_t words = train_target / 64 + 1;
  std::vector<std::vector<std::uint64_t>> reach(n + 1, std::vector<std::uint64_t>(words, 0));
  reach[n][0] = 1;
  const auto test = [&](std::size_t k, std::size_t s) { return (reach[k][s / 64] >> (s % 64)) & 1u; };
  for (std::size_t k = n; k-- > 0;) {
    auto& cur = reach[k];
    const auto& nxt = reach[k + 1];
    cur = nxt;
    const std::size_t c = counts[k].examples;
    if (c > train_target) continue;
    const std::size_t wshift = c / 64, bshift = c % 64;
    for (std::size_t w = words; w-- > wshift;) {
      std::uint64_t v = nxt[w - wshift] << bshift;
      if (bshift != 0 && w - wshift > 0) v |= nxt[w - wshift - 1] >> (64 - bshift);
      cur[w] |= v;
    }
    // Clear bits above the target.
    const std::size_t tail = (train_target + 1) % 64;
    if (tail != 0) cur[words - 1] &= (std::uint64_t{1} << tail) - 1;
  }

  std::size_t remaining = train_target;
  while (!test(0, remaining)) --remaining;
  std::vector<std::string> train;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = counts[k].examples;
    if (c <= remaining && test(k + 1, remaining - c) && c > 0) {
      train.push_back(counts[k].episode_id);
      remaining -= c;
    }
  }
  return train;
}

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json skips_j = nlohmann::json::array();
  for (const auto& s : skips) skips_j.push_back(skip_to_json(s));
  return {{"schema_version", 1},
          {"seed", seed},
          {"train_target", train_target},
          {"totals",
           {{"pairs", total_pairs},
            {"examples", total_examples},
            {"skipped", skipped},
            {"train", train_examples},
            {"eval", eval_examples}}},
          {"target_delta", target_delta()},
          {"train_episodes", train_episodes},
          {"eval_episodes", eval_episodes},
          {"skips", std::move(skips_j)},
          {"warnings", warnings}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_target = j.at("train_target").get<std::size_t>();
    const auto& t = j.at("totals");
    m.total_pairs = t.at("pairs").get<std::size_t>();
    m.total_examples = t.at("examples").get<std::size_t>();
    m.skipped = t.at("skipped").get<std::size_t>();
    m.train_examples = t.at("train").get<std::size_t>();
    m.eval_examples = t.at("eval").get<std::size_t>();
    m.train_episodes = j.value("train_episodes", std::vector<std::string>{});
    m.eval_episodes = j.value("eval_episodes", std::vector<std::string>{});
    m.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& s : j.value("skips", nlohmann::json::array()))
      m.skips.push_back({s.at("episode_id").get<std::string>(), s.at("pair_index").get<std::size_t>(),
                         s.at("code").get<std::string>(), s.value("message", "")});
    if (j.contains("target_delta") && j["target_delta"].get<long long>() != m.target_delta())
      throw config_error("target_delta does not match train - train_target");
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed dataset manifest: ") + e.what());
  }
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.total_examples + m.skipped != m.total_pairs)
    throw config_error("examples + skipped != pairs");
  if (m.train_examples + m.eval_examples != m.total_examples)
    throw config_error("train + eval != total examples");
  if (m.train_examples > m.train_target) throw config_error("train split exceeds its target");
  if (m.skips.size() > m.skipped) throw config_error("more skip records than skipped pairs");
  std::set<std::string> train(m.train_episodes.begin(), m.train_episodes.end());
  for (const auto& id : m.eval_episodes)
    if (train.count(id)) throw config_error("episode " + id + " appears in both splits");
}

DatasetManifest build_dataset(const std::vector<Episode>& episodes,
                              const ActionAnnotator& action_annotator,
                              const LayoutAnnotator& layout_annotator, const DatasetConfig& config,
                              const LogSink& log) {
  if (episodes.empty()) throw config_error("no episodes");
  std::set<std::string> ids;
  std::size_t pair_total = 0;
  for (const auto& ep : episodes) {
    ep.validate();
    if (!ids.insert(ep.episode_id).second) throw config_error("duplicate episode_id " + ep.episode_id);
    pair_total += extract_pairs(ep).size();
  }
  if (config.train_target > pair_total)
    throw config_error("train target " + std::to_string(config.train_target) + " exceeds the " +
                       std::to_string(pair_total) + " available pairs");

  AnnotatedPairs annotated =
      annotate_episodes(episodes, action_annotator, layout_annotator, config.max_in_flight, log);
  if (config.train_target > annotated.examples.size())
    throw config_error("train target " + std::to_string(config.train_target) + " exceeds the " +
                       std::to_string(annotated.examples.size()) + " annotated examples");

  std::map<std::string, std::size_t> per_episode;
  for (const auto& ep : episodes) per_episode[ep.episode_id] = 0;
  for (const auto& ex : annotated.examples) ++per_episode[ex.episode_id];
  std::vector<EpisodeCount> counts;
  for (const auto& [id, n] : per_episode) counts.push_back({id, n});

  DatasetManifest m;
  m.seed = config.seed;
  m.train_target = config.train_target;
  m.total_pairs = annotated.total_pairs;
  m.total_examples = annotated.examples.size();
  m.skipped = annotated.skips.size();
  m.skips = annotated.skips;
  m.train_episodes = select_train_episodes(counts, config.train_target, config.seed);
  std::set<std::string> train_set(m.train_episodes.begin(), m.train_episodes.end());
  for (const auto& [id, _] : per_episode)
    if (!train_set.count(id)) m.eval_episodes.push_back(id);

  std::vector<const TrainingExample*> train_rows, eval_rows;
  for (const auto& ex : annotated.examples)
    (train_set.count(ex.episode_id) ? train_rows : eval_rows).push_back(&ex);
  m.train_examples = train_rows.size();
  m.eval_examples = eval_rows.size();
  if (eval_rows.empty()) m.warnings.push_back("eval split is empty");
  if (m.target_delta() != 0)
    m.warnings.push_back("train split is " + std::to_string(-m.target_delta()) +
                         " examples short of its target");
  for (const auto& w : m.warnings)
    if (log) log("[dataset] warning: " + w);
  validate_manifest(m);

  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (ec) throw Error(ErrorCode::kStoreIoError, "cannot create " + config.out_dir.string());
  write_jsonl(config.out_dir / "train.jsonl", train_rows);
  write_jsonl(config.out_dir / "eval.jsonl", eval_rows);
  write_file_atomic(config.out_dir / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

}  // namespace uisim
