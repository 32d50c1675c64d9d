#pragma once

// Trajectory-to-training-data pipeline.
//
// Episodes are read from a directory of JSON manifests:
//
//   {"episode_id": "ep-001", "goal_text": "Find the cheapest hotel",
//    "frames": [{"frame": "ep-001/000.png", "is_keypoint": true,
//                "timestamp": 0.0}, ...]}
//
// Frame paths are relative to the manifest's directory. Every pair of
// consecutive keypoint frames becomes one example: the action between them
// and the layout of the second frame come from external annotators.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "uisim/http_client.hpp"
#include "uisim/image.hpp"
#include "uisim/layout.hpp"

namespace uisim {

struct FrameRecord {
  std::string frame_ref;
  bool is_keypoint = false;
  double timestamp = 0;
};

struct Episode {
  std::string episode_id;
  std::string goal_text;
  std::vector<FrameRecord> frames;
  // Directory frame refs are resolved against.
  std::filesystem::path base_dir;

  // Throws ConfigError.
  void validate() const;
  std::filesystem::path resolve(const std::string& frame_ref) const { return base_dir / frame_ref; }

  static Episode from_json(const nlohmann::json& j, std::filesystem::path base_dir);
  nlohmann::json to_json() const;
};

Episode load_episode(const std::filesystem::path& manifest_path);
// Every *.json manifest in `dir`, sorted by episode_id.
std::vector<Episode> load_episodes(const std::filesystem::path& dir);

struct FramePair {
  std::size_t pair_index = 0;
  std::string initial_frame_ref;
  std::string next_frame_ref;
  friend bool operator==(const FramePair&, const FramePair&) = default;
};

// max(k-1, 0) pairs for k keypoints, in trajectory order.
std::vector<FramePair> extract_pairs(const Episode& episode);

struct Annotation {
  std::string text;
  std::string version;
};

class ActionAnnotator {
 public:
  virtual ~ActionAnnotator() = default;
  virtual Annotation annotate_action(const Image& first, const Image& second,
                                     const std::string& goal_text) const = 0;
};

class LayoutAnnotator {
 public:
  virtual ~LayoutAnnotator() = default;
  // Returns layout DSL text.
  virtual Annotation annotate_layout(const Image& frame) const = 0;
};

struct RetryPolicy {
  int max_retries = 4;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

// Shared HTTP behaviour: exponential backoff on 429/5xx and transport errors,
// AnnotatorUnavailable once retries run out.
class RemoteAnnotatorBase {
 protected:
  RemoteAnnotatorBase(const std::string& base_url, std::chrono::milliseconds timeout,
                      RetryPolicy retry, const std::string& token);
  nlohmann::json call(const std::string& path, const nlohmann::json& body) const;
  std::string version_of(const nlohmann::json& response) const;

  JsonHttpClient client_;
  RetryPolicy retry_;
};

// POST /v1/annotate_action {first_png_base64, second_png_base64, goal_text}
//   -> {action_text, version?}
class RemoteActionAnnotator final : public ActionAnnotator, RemoteAnnotatorBase {
 public:
  explicit RemoteActionAnnotator(const std::string& base_url,
                                 std::chrono::milliseconds timeout = std::chrono::seconds(60),
                                 RetryPolicy retry = {}, const std::string& token = {});
  Annotation annotate_action(const Image& first, const Image& second,
                             const std::string& goal_text) const override;
};

// POST /v1/annotate_layout {image_png_base64} -> {layout_dsl, version?}, or
// {elements: [...], version?} with a flat element list.
class RemoteLayoutAnnotator final : public LayoutAnnotator, RemoteAnnotatorBase {
 public:
  explicit RemoteLayoutAnnotator(const std::string& base_url,
                                 std::chrono::milliseconds timeout = std::chrono::seconds(60),
                                 RetryPolicy retry = {}, const std::string& token = {});
  Annotation annotate_layout(const Image& frame) const override;
};

struct TrainingExample {
  std::string example_id;
  std::string episode_id;
  std::size_t pair_index = 0;
  std::string initial_frame_ref;
  std::string action_text;
  ScreenLayout next_layout;
  std::map<std::string, std::string> annotator_versions;

  // JSONL record: {example_id, episode_id, pair_index, initial_frame,
  // action_text, next_layout_dsl, annotator_versions}.
  nlohmann::json to_json() const;
  static TrainingExample from_json(const nlohmann::json& j);
};

std::string example_id_for(const std::string& episode_id, std::size_t pair_index);

// Throws InvalidImage, AnnotatorUnavailable or InvalidAnnotation.
TrainingExample annotate_pair(const ActionAnnotator& action_annotator,
                              const LayoutAnnotator& layout_annotator, const Episode& episode,
                              const FramePair& pair);

struct SkipRecord {
  std::string episode_id;
  std::size_t pair_index = 0;
  std::string code;
  std::string message;
};

using LogSink = std::function<void(const std::string&)>;
LogSink stderr_log_sink();

struct AnnotatedPairs {
  std::size_t total_pairs = 0;
  // Sorted by (episode_id, pair_index).
  std::vector<TrainingExample> examples;
  std::vector<SkipRecord> skips;
};

// Annotates every pair with up to `max_in_flight` concurrent requests. Each
// failed pair is logged and recorded as a skip.
AnnotatedPairs annotate_episodes(const std::vector<Episode>& episodes,
                                 const ActionAnnotator& action_annotator,
                                 const LayoutAnnotator& layout_annotator,
                                 std::size_t max_in_flight = 4,
                                 const LogSink& log = stderr_log_sink());

struct EpisodeCount {
  std::string episode_id;
  std::size_t examples = 0;
};

// Seeded episode-atomic split: episodes are shuffled, then the train side
// takes the subset whose example total is closest to `train_target` without
// exceeding it, preferring episodes earlier in the shuffled order. Returns
// the train episode ids in shuffled order.
std::vector<std::string> select_train_episodes(std::vector<EpisodeCount> counts,
                                               std::size_t train_target, std::uint64_t seed);

struct DatasetConfig {
  std::size_t train_target = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::size_t max_in_flight = 4;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t train_target = 0;
  std::size_t total_pairs = 0;
  std::size_t total_examples = 0;
  std::size_t skipped = 0;
  std::size_t train_examples = 0;
  std::size_t eval_examples = 0;
  std::vector<std::string> train_episodes;
  std::vector<std::string> eval_episodes;
  std::vector<SkipRecord> skips;
  std::vector<std::string> warnings;

  // train_examples - train_target.
  long long target_delta() const {
    return static_cast<long long>(train_examples) - static_cast<long long>(train_target);
  }

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

// Checks the manifest arithmetic and split disjointness; throws ConfigError.
void validate_manifest(const DatasetManifest& manifest);

// Writes train.jsonl, eval.jsonl and manifest.json into config.out_dir.
// Throws ConfigError when the train target exceeds the example total.
DatasetManifest build_dataset(const std::vector<Episode>& episodes,
                              const ActionAnnotator& action_annotator,
                              const LayoutAnnotator& layout_annotator,
                              const DatasetConfig& config,
                              const LogSink& log = stderr_log_sink());

}  // namespace uisim
