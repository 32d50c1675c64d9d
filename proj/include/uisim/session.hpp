#pragma once

// Branching look-ahead sessions: an append-only tree of simulated states with
// content-addressed persistence.
//
// Store layout (root from UISIM_STORE_DIR, default ./uisim-store):
//
//   <root>/<session_id>/manifest.json        schema_version 1
//   <root>/<session_id>/blobs/<sha256>.png   node images, deduplicated
//
// Node ids are per-session integers assigned in creation order; the root is 0.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "uisim/error.hpp"
#include "uisim/transition.hpp"

namespace uisim {

using NodeId = std::uint64_t;

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr std::size_t kMaxRolloutActions = 64;

struct SessionNode {
  NodeId id = 0;
  std::optional<NodeId> parent;
  SimState state;
};

struct BackendConfig {
  std::string predictor;
  std::string renderer;
  friend bool operator==(const BackendConfig&, const BackendConfig&) = default;
};

class SessionTree {
 public:
  SessionTree(std::string session_id, SimState root_state, BackendConfig backend_config);

  // Rebuilds a tree from persisted parts; throws CorruptSession when the
  // node set is not a single rooted, acyclic tree.
  static SessionTree restore(std::string session_id, std::string created_at,
                             std::string updated_at, BackendConfig backend_config,
                             std::vector<SessionNode> nodes);

  const std::string& session_id() const { return session_id_; }
  NodeId root_id() const { return 0; }
  const std::string& created_at() const { return created_at_; }
  const std::string& updated_at() const { return updated_at_; }
  const BackendConfig& backend_config() const { return backend_config_; }

  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  // Throws NodeNotFound.
  const SessionNode& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeId> node_ids() const;
  std::vector<NodeId> children(NodeId id) const;
  int depth(NodeId id) const;
  std::size_t edge_count() const;

  // Appends a child; existing nodes are never touched.
  NodeId add_child(NodeId parent, SimState state);

 private:
  SessionTree() = default;

  std::string session_id_;
  std::string created_at_;
  std::string updated_at_;
  BackendConfig backend_config_;
  // Nodes are shared and immutable so tree copies are cheap snapshots.
  std::map<NodeId, std::shared_ptr<const SessionNode>> nodes_;
  NodeId next_id_ = 0;
};

bool structurally_equal(const SessionTree& a, const SessionTree& b);

// Content digest of one node (parent link, layout, pixels, action, backends).
std::string node_digest(const SessionNode& node);

std::string new_session_id();
bool valid_session_id(std::string_view id);
std::string utc_timestamp();

// Throws InvalidImage for an invalid image.
SessionTree create_session(const Image& initial_image,
                           const std::optional<ScreenLayout>& initial_layout,
                           BackendConfig backend_config = {},
                           std::string session_id = new_session_id());

// Adds one child of `from_node` via the two-stage step. The tree is left
// unchanged when the step fails.
NodeId branch_step(SessionTree& tree, NodeId from_node, const SimAction& action,
                   const LayoutPredictor& predictor, const ScreenRenderer& renderer,
                   const StepOptions& options = {});

struct RolloutRequest {
  NodeId start_node = 0;
  std::vector<SimAction> actions;
  bool stop_on_error = true;

  // Throws InvalidRequest unless 1..64 actions.
  void validate() const;
};

struct RolloutFailure {
  std::size_t action_index;
  Error error;
};

struct RolloutResult {
  std::vector<NodeId> created;
  std::vector<RolloutFailure> failures;
  bool ok() const { return failures.empty(); }
};

// Applies the actions in order, each branching from the previous result.
// With stop_on_error the first failure ends the rollout; otherwise the failed
// action is skipped and the next one branches from the last good node.
RolloutResult rollout(SessionTree& tree, const RolloutRequest& request,
                      const LayoutPredictor& predictor, const ScreenRenderer& renderer,
                      const StepOptions& options = {});

nlohmann::json node_manifest(const SessionNode& node);
nlohmann::json session_manifest(const SessionTree& tree);

class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  // UISIM_STORE_DIR, else ./uisim-store.
  static std::filesystem::path default_root();

  const std::filesystem::path& root() const { return root_; }

  // Throws StoreIoError.
  void save(const SessionTree& tree) const;
  // Throws SessionNotFound or CorruptSession.
  SessionTree load(const std::string& session_id) const;
  bool exists(const std::string& session_id) const;
  std::vector<std::string> list() const;
  std::size_t blob_count(const std::string& session_id) const;

 private:
  std::filesystem::path session_dir(const std::string& session_id) const;

  std::filesystem::path root_;
};

// Thread-safe front end over trees, backends and the store. Writes to one
// session are serialized; readers see the last committed tree.
class SessionManager {
 public:
  SessionManager(std::shared_ptr<const LayoutPredictor> predictor,
                 std::shared_ptr<const ScreenRenderer> renderer,
                 std::shared_ptr<const SessionStore> store, StepOptions options = {},
                 std::size_t max_cached_sessions = 64);

  std::shared_ptr<const SessionTree> create(const Image& initial_image,
                                            const std::optional<ScreenLayout>& initial_layout);
  // Throws SessionNotFound.
  std::shared_ptr<const SessionTree> get(const std::string& session_id) const;
  std::vector<std::string> list() const;

  NodeId branch_step(const std::string& session_id, NodeId from_node, const SimAction& action);
  RolloutResult rollout(const std::string& session_id, const RolloutRequest& request);

  const LayoutPredictor& predictor() const { return *predictor_; }
  const ScreenRenderer& renderer() const { return *renderer_; }

 private:
  std::shared_ptr<std::mutex> writer_lock(const std::string& session_id);
  void publish(std::shared_ptr<const SessionTree> tree) const;

  std::shared_ptr<const LayoutPredictor> predictor_;
  std::shared_ptr<const ScreenRenderer> renderer_;
  std::shared_ptr<const SessionStore> store_;
  StepOptions options_;
  std::size_t max_cached_;

  mutable std::shared_mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const SessionTree>> cache_;
  mutable std::vector<std::string> lru_;
  std::map<std::string, std::shared_ptr<std::mutex>> writers_;
};

}  // namespace uisim
