#include "uisim/session.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <random>
#include <set>

#include "uisim/codec.hpp"

namespace uisim {
namespace {

Error corrupt(const std::string& msg) { return Error(ErrorCode::kCorruptSession, msg); }

nlohmann::json backend_info_to_json(const BackendInfo& b) {
  return {{"predictor", b.predictor},
          {"renderer", b.renderer},
          {"predictor_metadata", b.predictor_metadata}};
}

BackendInfo backend_info_from_json(const nlohmann::json& j) {
  BackendInfo b;
  b.predictor = j.value("predictor", "");
  b.renderer = j.value("renderer", "");
  if (j.contains("predictor_metadata")) b.predictor_metadata = j["predictor_metadata"];
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// SessionTree

SessionTree::SessionTree(std::string session_id, SimState root_state, BackendConfig backend_config)
    : session_id_(std::move(session_id)),
      created_at_(utc_timestamp()),
      updated_at_(created_at_),
      backend_config_(std::move(backend_config)) {
  if (root_state.action_taken)
    throw Error(ErrorCode::kInvalidRequest, "root state must not carry an action");
  auto root = std::make_shared<SessionNode>();
  root->id = 0;
  root->state = std::move(root_state);
  nodes_.emplace(0, std::move(root));
  next_id_ = 1;
}

SessionTree SessionTree::restore(std::string session_id, std::string created_at,
                                 std::string updated_at, BackendConfig backend_config,
                                 std::vector<SessionNode> nodes) {
  SessionTree t;
  t.session_id_ = std::move(session_id);
  t.created_at_ = std::move(created_at);
  t.updated_at_ = std::move(updated_at);
  t.backend_config_ = std::move(backend_config);
  std::size_t roots = 0;
  for (auto& n : nodes) {
    if (!n.parent) {
      ++roots;
      if (n.id != 0) throw corrupt("root node must have id 0");
      if (n.state.action_taken) throw corrupt("root node carries an action");
    } else if (!n.state.action_taken) {
      throw corrupt("node " + std::to_string(n.id) + " lacks action_taken");
    }
    t.next_id_ = std::max(t.next_id_, n.id + 1);
    const NodeId id = n.id;
    if (!t.nodes_.emplace(id, std::make_shared<SessionNode>(std::move(n))).second)
      throw corrupt("duplicate node id " + std::to_string(id));
  }
  if (roots != 1) throw corrupt("session must have exactly one root");
  for (const auto& [id, node] : t.nodes_) {
    // Walk to the root; a path longer than the node count means a cycle.
    std::size_t steps = 0;
    std::optional<NodeId> cur = node->parent;
    while (cur) {
      auto it = t.nodes_.find(*cur);
      if (it == t.nodes_.end()) throw corrupt("node " + std::to_string(id) + " has a dangling parent");
      if (++steps > t.nodes_.size()) throw corrupt("parent links contain a cycle");
      cur = it->second->parent;
    }
  }
  return t;
}

const SessionNode& SessionTree::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end())
    throw Error(ErrorCode::kNodeNotFound,
                "node " + std::to_string(id) + " not in session " + session_id_);
  return *it->second;
}

std::vector<NodeId> SessionTree::node_ids() const {
  std::vector<NodeId> ids;
  ids.reserve(nodes_.size());
  for (const auto& [id, _] : nodes_) ids.push_back(id);
  return ids;
}

std::vector<NodeId> SessionTree::children(NodeId id) const {
  std::vector<NodeId> out;
  for (const auto& [cid, n] : nodes_)
    if (n->parent == id) out.push_back(cid);
  return out;
}

int SessionTree::depth(NodeId id) const {
  int d = 0;
  for (auto p = node(id).parent; p; p = node(*p).parent) ++d;
  return d;
}

std::size_t SessionTree::edge_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const auto& kv) { return kv.second->parent; }));
}

NodeId SessionTree::add_child(NodeId parent, SimState state) {
  node(parent);
  if (!state.action_taken)
    throw Error(ErrorCode::kInvalidRequest, "non-root nodes need the action that produced them");
  auto n = std::make_shared<SessionNode>();
  n->id = next_id_;
  n->parent = parent;
  n->state = std::move(state);
  nodes_.emplace(n->id, std::move(n));
  updated_at_ = utc_timestamp();
  return next_id_++;
}

bool structurally_equal(const SessionTree& a, const SessionTree& b) {
  if (a.session_id() != b.session_id() || a.size() != b.size() ||
      !(a.backend_config() == b.backend_config()) || a.created_at() != b.created_at() ||
      a.updated_at() != b.updated_at())
    return false;
  for (NodeId id : a.node_ids()) {
    if (!b.contains(id)) return false;
    const auto& x = a.node(id);
    const auto& y = b.node(id);
    if (x.parent != y.parent || !same_state(x.state, y.state) ||
        !(x.state.latency_ms == y.state.latency_ms))
      return false;
  }
  return true;
}

std::string node_digest(const SessionNode& node) {
  nlohmann::json j = {
      {"id", node.id},
      {"parent", node.parent ? nlohmann::json(*node.parent) : nlohmann::json()},
      {"layout", serialize_layout(node.state.layout)},
      {"image", sha256_hex(node.state.image.pixels)},
      {"width", node.state.image.width},
      {"height", node.state.image.height},
      {"action", node.state.action_taken ? action_to_json(*node.state.action_taken)
                                         : nlohmann::json()},
      {"backend_info", backend_info_to_json(node.state.backend_info)},
  };
  return sha256_hex(j.dump());
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

bool valid_session_id(std::string_view id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
  });
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms.count()));
  return out;
}

// ---------------------------------------------------------------------------
// Operations

SessionTree create_session(const Image& initial_image,
                           const std::optional<ScreenLayout>& initial_layout,
                           BackendConfig backend_config, std::string session_id) {
  if (!initial_image.valid()) throw Error(ErrorCode::kInvalidImage, "initial image is invalid");
  if (!valid_session_id(session_id))
    throw Error(ErrorCode::kInvalidRequest, "invalid session id '" + session_id + "'");
  SimState root;
  root.image = initial_image;
  if (initial_layout) {
    validate_layout(*initial_layout);
    root.layout = *initial_layout;
  } else {
    root.layout = placeholder_layout(LayoutSource::kAnnotatedAbsent);
  }
  root.backend_info = {"initial", "initial", nullptr};
  return SessionTree(std::move(session_id), std::move(root), std::move(backend_config));
}

NodeId branch_step(SessionTree& tree, NodeId from_node, const SimAction& action,
                   const LayoutPredictor& predictor, const ScreenRenderer& renderer,
                   const StepOptions& options) {
  const SessionNode& from = tree.node(from_node);
  SimState next = step(predictor, renderer, from.state, action, options);
  return tree.add_child(from_node, std::move(next));
}

void RolloutRequest::validate() const {
  if (actions.empty()) throw Error(ErrorCode::kInvalidRequest, "rollout needs at least one action");
  if (actions.size() > kMaxRolloutActions)
    throw Error(ErrorCode::kInvalidRequest, "rollout is limited to 64 actions");
}

RolloutResult rollout(SessionTree& tree, const RolloutRequest& request,
                      const LayoutPredictor& predictor, const ScreenRenderer& renderer,
                      const StepOptions& options) {
  request.validate();
  tree.node(request.start_node);
  RolloutResult result;
  NodeId cursor = request.start_node;
  for (std::size_t i = 0; i < request.actions.size(); ++i) {
    try {
      cursor = branch_step(tree, cursor, request.actions[i], predictor, renderer, options);
      result.created.push_back(cursor);
    } catch (const Error& e) {
      result.failures.push_back({i, e});
      if (request.stop_on_error) break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

nlohmann::json node_manifest(const SessionNode& n) {
  return {
      {"node_id", n.id},
      {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json()},
      {"layout_dsl", serialize_layout(n.state.layout)},
      {"image_sha256", sha256_hex(encode_png(n.state.image))},
      {"action", n.state.action_taken ? action_to_json(*n.state.action_taken) : nlohmann::json()},
      {"backend_info", backend_info_to_json(n.state.backend_info)},
      {"latency_ms",
       {{"layout", n.state.latency_ms.layout_ms}, {"render", n.state.latency_ms.render_ms}}},
  };
}

nlohmann::json session_manifest(const SessionTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (NodeId id : tree.node_ids()) nodes.push_back(node_manifest(tree.node(id)));
  return {
      {"schema_version", kManifestSchemaVersion},
      {"session_id", tree.session_id()},
      {"created_at", tree.created_at()},
      {"updated_at", tree.updated_at()},
      {"backend_config",
       {{"predictor", tree.backend_config().predictor},
        {"renderer", tree.backend_config().renderer}}},
      {"root_id", tree.root_id()},
      {"nodes", std::move(nodes)},
  };
}

SessionStore::SessionStore(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path SessionStore::default_root() {
  if (const char* env = std::getenv("UISIM_STORE_DIR"); env != nullptr && *env != '\0') return env;
  return "uisim-store";
}

std::filesystem::path SessionStore::session_dir(const std::string& session_id) const {
  if (!valid_session_id(session_id))
    throw Error(ErrorCode::kSessionNotFound, "no session '" + session_id + "'");
  return root_ / session_id;
}

void SessionStore::save(const SessionTree& tree) const {
  const auto dir = session_dir(tree.session_id());
  std::error_code ec;
  std::filesystem::create_directories(dir / "blobs", ec);
  if (ec) throw Error(ErrorCode::kStoreIoError, "cannot create " + dir.string() + ": " + ec.message());
  for (NodeId id : tree.node_ids()) {
    const auto png = encode_png(tree.node(id).state.image);
    const auto blob = dir / "blobs" / (sha256_hex(png) + ".png");
    if (!std::filesystem::exists(blob, ec)) write_file_atomic(blob, png);
  }
  write_file_atomic(dir / "manifest.json", session_manifest(tree).dump(2) + "\n");
}

SessionTree SessionStore::load(const std::string& session_id) const {
  const auto dir = session_dir(session_id);
  const auto manifest_path = dir / "manifest.json";
  std::error_code ec;
  if (!std::filesystem::exists(manifest_path, ec))
    throw Error(ErrorCode::kSessionNotFound, "no session '" + session_id + "'");
  const auto m = nlohmann::json::parse(read_file_text(manifest_path), nullptr, false);
  if (m.is_discarded()) throw corrupt("manifest is not valid JSON");
  try {
    if (m.at("schema_version").get<int>() != kManifestSchemaVersion)
      throw corrupt("unsupported manifest schema_version");
    if (m.at("session_id").get<std::string>() != session_id)
      throw corrupt("manifest session_id does not match its directory");
    std::vector<SessionNode> nodes;
    std::map<std::string, Image> decoded;
    for (const auto& nj : m.at("nodes")) {
      SessionNode n;
      n.id = nj.at("node_id").get<NodeId>();
      if (!nj.at("parent").is_null()) n.parent = nj["parent"].get<NodeId>();
      n.state.layout = parse_layout(nj.at("layout_dsl").get<std::string>());
      const auto sha = nj.at("image_sha256").get<std::string>();
      auto hit = decoded.find(sha);
      if (hit == decoded.end()) {
        if (sha.size() != 64 || sha.find_first_not_of("0123456789abcdef") != std::string::npos)
          throw corrupt("malformed image digest");
        const auto blob_path = dir / "blobs" / (sha + ".png");
        std::vector<std::uint8_t> bytes;
        try {
          bytes = read_file_bytes(blob_path);
        } catch (const Error&) {
          throw corrupt("missing image blob " + sha);
        }
        if (sha256_hex(bytes) != sha) throw corrupt("image blob " + sha + " fails its hash check");
        hit = decoded.emplace(sha, decode_png(bytes)).first;
      }
      n.state.image = hit->second;
      if (!nj.at("action").is_null()) n.state.action_taken = action_from_json(nj["action"]);
      n.state.backend_info = backend_info_from_json(nj.at("backend_info"));
      n.state.latency_ms.layout_ms = nj.at("latency_ms").at("layout").get<double>();
      n.state.latency_ms.render_ms = nj.at("latency_ms").at("render").get<double>();
      nodes.push_back(std::move(n));
    }
    const auto& bc = m.at("backend_config");
    return SessionTree::restore(session_id, m.at("created_at").get<std::string>(),
                                m.at("updated_at").get<std::string>(),
                                {bc.at("predictor").get<std::string>(),
                                 bc.at("renderer").get<std::string>()},
                                std::move(nodes));
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(std::string("malformed manifest: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruptSession) throw;
    throw corrupt(std::string("invalid manifest content: ") + e.what());
  }
}

bool SessionStore::exists(const std::string& session_id) const {
  if (!valid_session_id(session_id)) return false;
  std::error_code ec;
  return std::filesystem::exists(root_ / session_id / "manifest.json", ec);
}

std::vector<std::string> SessionStore::list() const {
  std::vector<std::string> ids;
  std::error_code ec;
  if (!std::filesystem::is_directory(root_, ec)) return ids;
  for (const auto& entry : std::filesystem::directory_iterator(root_, ec)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && exists(name)) ids.push_back(name);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t SessionStore::blob_count(const std::string& session_id) const {
  std::size_t n = 0;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(session_dir(session_id) / "blobs", ec))
    if (entry.path().extension() == ".png") ++n;
  return n;
}

// ---------------------------------------------------------------------------
// SessionManager

SessionManager::SessionManager(std::shared_ptr<const LayoutPredictor> predictor,
                               std::shared_ptr<const ScreenRenderer> renderer,
                               std::shared_ptr<const SessionStore> store, StepOptions options,
                               std::size_t max_cached_sessions)
    : predictor_(std::move(predictor)),
      renderer_(std::move(renderer)),
      store_(std::move(store)),
      options_(options),
      max_cached_(std::max<std::size_t>(1, max_cached_sessions)) {}

void SessionManager::publish(std::shared_ptr<const SessionTree> tree) const {
  std::unique_lock lock(mu_);
  const auto& id = tree->session_id();
  cache_[id] = std::move(tree);
  lru_.erase(std::remove(lru_.begin(), lru_.end(), id), lru_.end());
  lru_.push_back(id);
  // Persisted sessions can be evicted and reloaded on demand.
  while (store_ && cache_.size() > max_cached_ && !lru_.empty()) {
    cache_.erase(lru_.front());
    lru_.erase(lru_.begin());
  }
}

std::shared_ptr<std::mutex> SessionManager::writer_lock(const std::string& session_id) {
  std::unique_lock lock(mu_);
  auto& m = writers_[session_id];
  if (!m) m = std::make_shared<std::mutex>();
  return m;
}

std::shared_ptr<const SessionTree> SessionManager::create(
    const Image& initial_image, const std::optional<ScreenLayout>& initial_layout) {
  auto tree = std::make_shared<SessionTree>(create_session(
      initial_image, initial_layout, BackendConfig{predictor_->name(), renderer_->name()}));
  if (store_) store_->save(*tree);
  publish(tree);
  return tree;
}

std::shared_ptr<const SessionTree> SessionManager::get(const std::string& session_id) const {
  {
    std::shared_lock lock(mu_);
    auto it = cache_.find(session_id);
    if (it != cache_.end()) return it->second;
  }
  if (!store_ || !store_->exists(session_id))
    throw Error(ErrorCode::kSessionNotFound, "no session '" + session_id + "'");
  auto tree = std::make_shared<const SessionTree>(store_->load(session_id));
  publish(tree);
  return tree;
}

std::vector<std::string> SessionManager::list() const {
  std::set<std::string> ids;
  if (store_)
    for (auto& id : store_->list()) ids.insert(std::move(id));
  std::shared_lock lock(mu_);
  for (const auto& [id, _] : cache_) ids.insert(id);
  return {ids.begin(), ids.end()};
}

NodeId SessionManager::branch_step(const std::string& session_id, NodeId from_node,
                                   const SimAction& action) {
  auto writer = writer_lock(session_id);
  std::lock_guard guard(*writer);
  auto draft = std::make_shared<SessionTree>(*get(session_id));
  const NodeId id = uisim::branch_step(*draft, from_node, action, *predictor_, *renderer_, options_);
  if (store_) store_->save(*draft);
  publish(draft);
  return id;
}

RolloutResult SessionManager::rollout(const std::string& session_id,
                                      const RolloutRequest& request) {
  auto writer = writer_lock(session_id);
  std::lock_guard guard(*writer);
  auto draft = std::make_shared<SessionTree>(*get(session_id));
  RolloutResult result = uisim::rollout(*draft, request, *predictor_, *renderer_, options_);
  if (!result.created.empty()) {
    if (store_) store_->save(*draft);
    publish(draft);
  }
  return result;
}

}  // namespace uisim
