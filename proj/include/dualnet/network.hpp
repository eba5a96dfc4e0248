#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dualnet/layers.hpp"

namespace dualnet {

enum class NetKind { plain_stack, residual, dense, dualnet };
enum class Connectivity { concat, add };

const char* net_kind_name(NetKind k);
NetKind net_kind_from_name(const std::string& s);
const char* connectivity_name(Connectivity c);
Connectivity connectivity_from_name(const std::string& s);

struct PoolConfig {
  std::size_t size = 2;
  std::size_t stride = 1;
};

struct AttentionConfig {
  bool enabled = false;
  std::size_t width = 0;  // ignored when width_auto or projections off
  bool width_auto = false;
  bool projections = true;
};

struct ArchitectureConfig {
  static constexpr int kVersion = 1;

  NetKind kind = NetKind::dualnet;
  std::size_t input_features = 0;  // 0: adopt the encoded width at training
  std::size_t stem_width = 8;      // 0: match input_features
  std::size_t growth_rate = 4;     // plain blocks per dense block
  std::size_t blocks = 1;          // dense / residual / stacked block count
  std::size_t kernel = 3;
  PoolConfig pool;
  double dropout_rate = 0.4;
  AttentionConfig attention;
  Connectivity connectivity = Connectivity::concat;
  std::size_t classes = 2;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::string to_json_text(int indent = 2) const;
  static ArchitectureConfig from_json_text(const std::string& text);
  static ArchitectureConfig load(const std::string& path);
  void save(const std::string& path) const;
  // sorted-key single-line form; equal configs hash equal
  std::string canonical() const;
  std::uint64_t hash() const;
};

struct BlockPlan {
  std::string name;
  std::string kind;  // plain | residual | dense | transition
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t params = 0;
};

struct NetworkPlan {
  std::vector<BlockPlan> blocks;
  std::size_t block_count = 0;        // seven layers each
  std::size_t total_layers = 0;       // 7 * blocks + stem + pooling head + classifier
  std::size_t total_param_layers = 0; // 4 per block + classifier (+ attention)
  std::size_t total_params = 0;
  std::size_t stem_width = 0;
  std::size_t head_width = 0;         // channels entering global pooling
  bool has_attention = false;

  std::string to_string() const;
};

// Pure shape-and-count walk of a configuration; no parameters allocated.
NetworkPlan plan_network(const ArchitectureConfig& cfg);

std::size_t plain_block_params(std::size_t c_in, std::size_t c_out,
                               std::size_t kernel);

// k plain blocks; with concat connectivity block i consumes the block input
// and every earlier output, so the output carries (k+1) times the input
// width. With add connectivity widths stay fixed.
struct DenseBlock {
  std::string name;
  Connectivity conn = Connectivity::concat;
  std::size_t c_in = 0, c_out = 0;
  std::vector<PlainBlock> plains;

  ValueId forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  void visit_state(const StateVisitor& fn);
};

// plain(x) + x; the shortcut requires the block to preserve width.
struct ResidualBlock {
  std::string name;
  PlainBlock plain;

  ValueId forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  void visit_state(const StateVisitor& fn);
};

PlainBlock build_plain_block(const std::string& name, std::size_t c_in,
                             std::size_t c_out, const ArchitectureConfig& cfg,
                             Dtype dt = Dtype::f64);
DenseBlock build_dense_block(const std::string& name, std::size_t c_base,
                             std::size_t k, const ArchitectureConfig& cfg,
                             Dtype dt = Dtype::f64);
// restores a widened feature map back to `to_width` channels
PlainBlock build_transition_block(const std::string& name,
                                  std::size_t from_width, std::size_t to_width,
                                  const ArchitectureConfig& cfg,
                                  Dtype dt = Dtype::f64);
ResidualBlock build_residual_block(const std::string& name, std::size_t c_in,
                                   std::size_t c_out,
                                   const ArchitectureConfig& cfg,
                                   Dtype dt = Dtype::f64);

class Network {
 public:
  static Network build(const ArchitectureConfig& cfg, Dtype dt = Dtype::f64);

  const ArchitectureConfig& config() const { return cfg_; }
  const NetworkPlan& plan() const { return plan_; }
  Dtype dtype() const { return dtype_; }
  std::size_t classes() const { return cfg_.classes; }

  std::size_t input_features() const { return input_features_; }
  void set_input_features(std::size_t f);

  // x: [batch, features] -> class probabilities [batch, classes]
  ValueId forward(FwdCtx& ctx, ValueId x);

  void visit_params(const ParamVisitor& fn);
  void visit_state(const StateVisitor& fn);

 private:
  using Stage = std::variant<PlainBlock, ResidualBlock, DenseBlock>;

  ArchitectureConfig cfg_;
  NetworkPlan plan_;
  Dtype dtype_ = Dtype::f64;
  std::size_t input_features_ = 0;
  LinearLayer stem_;
  std::vector<Stage> stages_;
  std::optional<AttentionLayer> attention_;
  LinearLayer head_;
};

// Trainable scalars, enumerated; must agree with the plan's formula count.
std::size_t count_params(Network& net);

}  // namespace dualnet
