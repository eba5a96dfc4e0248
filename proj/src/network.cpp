#include "dualnet/network.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dualnet {

using nlohmann::json;

const char* net_kind_name(NetKind k) {
  switch (k) {
    case NetKind::plain_stack: return "plain_stack";
    case NetKind::residual: return "residual";
    case NetKind::dense: return "dense";
    case NetKind::dualnet: return "dualnet";
  }
  return "?";
}

NetKind net_kind_from_name(const std::string& s) {
  if (s == "plain_stack") return NetKind::plain_stack;
  if (s == "residual") return NetKind::residual;
  if (s == "dense") return NetKind::dense;
  if (s == "dualnet") return NetKind::dualnet;
  throw ConfigError("unknown network kind '" + s + "'");
}

const char* connectivity_name(Connectivity c) {
  return c == Connectivity::concat ? "concat" : "add";
}

Connectivity connectivity_from_name(const std::string& s) {
  if (s == "concat") return Connectivity::concat;
  if (s == "add") return Connectivity::add;
  throw ConfigError("unknown connectivity '" + s + "'");
}

void ArchitectureConfig::validate() const {
  if (blocks < 1) throw ConfigError("blocks must be at least 1");
  if (growth_rate < 1) throw ConfigError("growth_rate must be at least 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw ConfigError("kernel must be odd, got " + std::to_string(kernel));
  if (pool.size < 1) throw ConfigError("pool.size must be at least 1");
  if (pool.stride < 1) throw ConfigError("pool.stride must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0, 1), got " +
                      std::to_string(dropout_rate));
  if (classes < 2) throw ConfigError("classes must be at least 2");
  bool wants_attention = (kind == NetKind::dualnet);
  if (wants_attention && !attention.enabled)
    throw ConfigError("the dualnet design requires attention.enabled");
  if (!wants_attention && attention.enabled)
    throw ConfigError(std::string("attention is only part of the dualnet "
                                  "design, not ") +
                      net_kind_name(kind));
  if (attention.enabled && attention.projections && attention.width == 0 &&
      !attention.width_auto)
    throw ConfigError("attention.width must be positive (or \"auto\") when "
                      "projections are on");
}

static void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

static json arch_to_json(const ArchitectureConfig& c) {
  json j;
  j["version"] = ArchitectureConfig::kVersion;
  j["kind"] = net_kind_name(c.kind);
  j["input_features"] = c.input_features;
  j["stem_width"] = c.stem_width;
  j["growth_rate"] = c.growth_rate;
  j["blocks"] = c.blocks;
  j["kernel"] = c.kernel;
  j["pool"] = {{"size", c.pool.size}, {"stride", c.pool.stride}};
  j["dropout_rate"] = c.dropout_rate;
  json att;
  att["enabled"] = c.attention.enabled;
  if (c.attention.width_auto)
    att["width"] = "auto";
  else
    att["width"] = c.attention.width;
  att["projections"] = c.attention.projections;
  j["attention"] = att;
  j["connectivity"] = connectivity_name(c.connectivity);
  j["classes"] = c.classes;
  j["init_seed"] = c.init_seed;
  return j;
}

static ArchitectureConfig arch_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("architecture config must be an object");
  check_keys(j, {"version", "kind", "input_features", "stem_width",
                 "growth_rate", "blocks", "kernel", "pool", "dropout_rate",
                 "attention", "connectivity", "classes", "init_seed"},
             "architecture config");
  if (!j.contains("version"))
    throw ConfigError("architecture config is missing 'version'");
  int version = j.at("version").get<int>();
  if (version != ArchitectureConfig::kVersion)
    throw ConfigError("unsupported architecture config version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(ArchitectureConfig::kVersion) + ")");
  if (!j.contains("kind"))
    throw ConfigError("architecture config is missing 'kind'");

  ArchitectureConfig c;
  c.kind = net_kind_from_name(j.at("kind").get<std::string>());
  if (c.kind == NetKind::dualnet) c.attention.enabled = true;
  if (j.contains("input_features"))
    c.input_features = j.at("input_features").get<std::size_t>();
  if (j.contains("stem_width"))
    c.stem_width = j.at("stem_width").get<std::size_t>();
  if (j.contains("growth_rate"))
    c.growth_rate = j.at("growth_rate").get<std::size_t>();
  if (j.contains("blocks")) c.blocks = j.at("blocks").get<std::size_t>();
  if (j.contains("kernel")) c.kernel = j.at("kernel").get<std::size_t>();
  if (j.contains("pool")) {
    const json& p = j.at("pool");
    check_keys(p, {"size", "stride"}, "pool");
    if (p.contains("size")) c.pool.size = p.at("size").get<std::size_t>();
    if (p.contains("stride")) c.pool.stride = p.at("stride").get<std::size_t>();
  }
  if (j.contains("dropout_rate"))
    c.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("attention")) {
    const json& a = j.at("attention");
    check_keys(a, {"enabled", "width", "projections"}, "attention");
    if (a.contains("enabled")) c.attention.enabled = a.at("enabled").get<bool>();
    if (a.contains("width")) {
      const json& w = a.at("width");
      if (w.is_string()) {
        if (w.get<std::string>() != "auto")
          throw ConfigError("attention.width must be a number or \"auto\"");
        c.attention.width_auto = true;
        c.attention.width = 0;
      } else {
        c.attention.width = w.get<std::size_t>();
      }
    }
    if (a.contains("projections"))
      c.attention.projections = a.at("projections").get<bool>();
  }
  if (j.contains("connectivity"))
    c.connectivity =
        connectivity_from_name(j.at("connectivity").get<std::string>());
  if (j.contains("classes")) c.classes = j.at("classes").get<std::size_t>();
  if (j.contains("init_seed"))
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

std::string ArchitectureConfig::to_json_text(int indent) const {
  return arch_to_json(*this).dump(indent) + "\n";
}

ArchitectureConfig ArchitectureConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("architecture config is not valid JSON: ") +
                      e.what());
  }
  return arch_from_json(j);
}

ArchitectureConfig ArchitectureConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open architecture config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void ArchitectureConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write architecture config '" + path + "'");
  out << to_json_text();
}

std::string ArchitectureConfig::canonical() const {
  return arch_to_json(*this).dump();
}

std::uint64_t ArchitectureConfig::hash() const { return fnv1a64(canonical()); }

std::size_t plain_block_params(std::size_t c_in, std::size_t c_out,
                               std::size_t kernel) {
  std::size_t dsc = kernel * c_in + c_in * c_out + c_out;
  std::size_t gru = 3 * (c_out * c_out + c_out * c_out + c_out);
  std::size_t bn = 2 * c_out;
  std::size_t bridge = c_out * c_out + c_out;
  return dsc + gru + bn + bridge;
}

static std::size_t resolved_stem_width(const ArchitectureConfig& cfg) {
  std::size_t w = cfg.stem_width ? cfg.stem_width : cfg.input_features;
  if (w == 0)
    throw ConfigError(
        "stem_width 0 means \"match input features\", but input_features is "
        "not set");
  return w;
}

// Resolves the attention width against the channel count it will see.
static std::size_t resolved_attention_width(const ArchitectureConfig& cfg,
                                            std::size_t c_pre) {
  const AttentionConfig& a = cfg.attention;
  if (!a.projections) {
    if (!a.width_auto && a.width != 0 && a.width != c_pre)
      throw ConfigError(
          "attention without projections cannot change the width: got width " +
          std::to_string(a.width) + " on " + std::to_string(c_pre) +
          " channels (use 0 or \"auto\")");
    return c_pre;
  }
  return a.width_auto ? c_pre : a.width;
}

NetworkPlan plan_network(const ArchitectureConfig& cfg) {
  cfg.validate();
  NetworkPlan plan;
  std::size_t w = resolved_stem_width(cfg);
  plan.stem_width = w;
  bool concat = (cfg.connectivity == Connectivity::concat);

  auto push = [&](const std::string& name, const std::string& kind,
                  std::size_t ci, std::size_t co) {
    plan.blocks.push_back(
        {name, kind, ci, co, plain_block_params(ci, co, cfg.kernel)});
  };

  std::size_t width = w;
  switch (cfg.kind) {
    case NetKind::plain_stack:
      for (std::size_t b = 1; b <= cfg.blocks; ++b)
        push("block" + std::to_string(b), "plain", width, width);
      break;
    case NetKind::residual:
      for (std::size_t b = 1; b <= cfg.blocks; ++b)
        push("res" + std::to_string(b), "residual", width, width);
      break;
    case NetKind::dense:
    case NetKind::dualnet: {
      std::size_t k = cfg.growth_rate;
      for (std::size_t d = 1; d <= cfg.blocks; ++d) {
        std::string base = "dense" + std::to_string(d) + "/plain";
        for (std::size_t i = 1; i <= k; ++i) {
          std::size_t ci = concat ? i * w : w;
          push(base + std::to_string(i), "dense", ci, w);
        }
        width = concat ? (k + 1) * w : w;
        if (d < cfg.blocks) {
          push("transition" + std::to_string(d), "transition", width, w);
          width = w;
        }
      }
      break;
    }
  }

  plan.block_count = plan.blocks.size();
  plan.has_attention = cfg.attention.enabled;
  std::size_t att_params = 0;
  bool att_param_layer = false;
  std::size_t head_in = width;
  if (cfg.attention.enabled) {
    std::size_t d = resolved_attention_width(cfg, width);
    if (cfg.attention.projections) {
      att_params = 3 * width * d;
      att_param_layer = true;
      head_in = d;
    }
  }
  plan.head_width = head_in;

  plan.total_layers = PlainBlock::kLayers * plan.block_count + 3 +
                      (plan.has_attention ? 1 : 0);
  plan.total_param_layers = PlainBlock::kParamLayers * plan.block_count + 1 +
                            (att_param_layer ? 1 : 0);
  plan.total_params = 2 * w + att_params + head_in * cfg.classes + cfg.classes;
  for (const BlockPlan& b : plan.blocks) plan.total_params += b.params;
  return plan;
}

std::string NetworkPlan::to_string() const {
  std::ostringstream os;
  os << "stem: 1 -> " << stem_width << "\n";
  for (const BlockPlan& b : blocks)
    os << b.name << " [" << b.kind << "] " << b.c_in << " -> " << b.c_out
       << ", " << b.params << " params\n";
  if (has_attention) os << "attention -> " << head_width << "\n";
  os << "head: " << head_width << " -> classes\n";
  os << "blocks " << block_count << ", layers " << total_layers
     << ", parameterized layers " << total_param_layers << ", parameters "
     << total_params << "\n";
  return os.str();
}

PlainBlock build_plain_block(const std::string& name, std::size_t c_in,
                             std::size_t c_out, const ArchitectureConfig& cfg,
                             Dtype dt) {
  if (c_in == 0 || c_out == 0)
    throw ConfigError("block '" + name + "': widths must be positive");
  MaxPoolLayer pool{cfg.pool.size, cfg.pool.stride};
  PlainBlock blk = PlainBlock::make(name, c_in, c_out, cfg.kernel, pool,
                                    cfg.dropout_rate, dt);
  init_layer(blk, cfg.init_seed);
  return blk;
}

DenseBlock build_dense_block(const std::string& name, std::size_t c_base,
                             std::size_t k, const ArchitectureConfig& cfg,
                             Dtype dt) {
  if (k < 1) throw ConfigError("dense block '" + name + "' needs k >= 1");
  DenseBlock blk;
  blk.name = name;
  blk.conn = cfg.connectivity;
  blk.c_in = c_base;
  bool concat = (cfg.connectivity == Connectivity::concat);
  for (std::size_t i = 1; i <= k; ++i) {
    std::size_t ci = concat ? i * c_base : c_base;
    blk.plains.push_back(build_plain_block(
        name + "/plain" + std::to_string(i), ci, c_base, cfg, dt));
  }
  blk.c_out = concat ? (k + 1) * c_base : c_base;
  return blk;
}

PlainBlock build_transition_block(const std::string& name,
                                  std::size_t from_width, std::size_t to_width,
                                  const ArchitectureConfig& cfg, Dtype dt) {
  return build_plain_block(name, from_width, to_width, cfg, dt);
}

ResidualBlock build_residual_block(const std::string& name, std::size_t c_in,
                                   std::size_t c_out,
                                   const ArchitectureConfig& cfg, Dtype dt) {
  if (c_in != c_out)
    throw ConfigError("residual block '" + name +
                      "': the shortcut needs matching widths, got " +
                      std::to_string(c_in) + " -> " + std::to_string(c_out));
  ResidualBlock blk;
  blk.name = name;
  blk.plain = build_plain_block(name + "/plain", c_in, c_out, cfg, dt);
  return blk;
}

ValueId DenseBlock::forward(FwdCtx& ctx, ValueId x) {
  if (conn == Connectivity::concat) {
    std::vector<ValueId> feats{x};
    for (PlainBlock& p : plains) {
      ValueId in = feats.size() == 1 ? x : ops::concat_channels(ctx.tape, feats);
      feats.push_back(p.forward(ctx, in));
    }
    return ops::concat_channels(ctx.tape, feats);
  }
  ValueId sum = x;
  for (PlainBlock& p : plains)
    sum = ops::add(ctx.tape, sum, p.forward(ctx, sum));
  return sum;
}

void DenseBlock::visit_params(const ParamVisitor& fn) {
  for (PlainBlock& p : plains) p.visit_params(fn);
}

void DenseBlock::visit_state(const StateVisitor& fn) {
  for (PlainBlock& p : plains) p.visit_state(fn);
}

ValueId ResidualBlock::forward(FwdCtx& ctx, ValueId x) {
  return ops::add(ctx.tape, plain.forward(ctx, x), x);
}

void ResidualBlock::visit_params(const ParamVisitor& fn) {
  plain.visit_params(fn);
}

void ResidualBlock::visit_state(const StateVisitor& fn) {
  plain.visit_state(fn);
}

Network Network::build(const ArchitectureConfig& cfg, Dtype dt) {
  cfg.validate();
  Network net;
  net.cfg_ = cfg;
  net.dtype_ = dt;
  net.input_features_ = cfg.input_features;
  net.plan_ = plan_network(cfg);
  std::size_t w = net.plan_.stem_width;

  net.stem_ = LinearLayer::make("stem", 1, w, dt);

  std::size_t width = w;
  switch (cfg.kind) {
    case NetKind::plain_stack:
      for (std::size_t b = 1; b <= cfg.blocks; ++b)
        net.stages_.emplace_back(
            build_plain_block("block" + std::to_string(b), width, width, cfg, dt));
      break;
    case NetKind::residual:
      for (std::size_t b = 1; b <= cfg.blocks; ++b)
        net.stages_.emplace_back(
            build_residual_block("res" + std::to_string(b), width, width, cfg, dt));
      break;
    case NetKind::dense:
    case NetKind::dualnet:
      for (std::size_t d = 1; d <= cfg.blocks; ++d) {
        DenseBlock blk = build_dense_block("dense" + std::to_string(d), w,
                                           cfg.growth_rate, cfg, dt);
        width = blk.c_out;
        net.stages_.emplace_back(std::move(blk));
        if (d < cfg.blocks) {
          net.stages_.emplace_back(build_transition_block(
              "transition" + std::to_string(d), width, w, cfg, dt));
          width = w;
        }
      }
      break;
  }

  if (cfg.attention.enabled) {
    std::size_t d = resolved_attention_width(cfg, width);
    net.attention_ =
        AttentionLayer::make("attention", width, d, cfg.attention.projections, dt);
    width = net.attention_->out_width();
  }
  net.head_ = LinearLayer::make("head", width, cfg.classes, dt);

  net.visit_params([&](const std::string& name, Tensor& t, const ParamInit& pi) {
    init_param_tensor(name, t, pi, cfg.init_seed);
  });
  // calibrated start: a zero classifier makes the first predictions exactly
  // uniform, so training begins at the chance-level loss
  net.head_.visit_params([](const std::string&, Tensor& t, const ParamInit&) {
    std::fill(t.data().begin(), t.data().end(), 0.0);
  });
  return net;
}

void Network::set_input_features(std::size_t f) {
  if (f == 0) throw ConfigError("input feature count must be positive");
  if (input_features_ != 0 && input_features_ != f)
    throw ConfigError("network was built for " +
                      std::to_string(input_features_) +
                      " input features, cannot adopt " + std::to_string(f));
  input_features_ = f;
}

ValueId Network::forward(FwdCtx& ctx, ValueId x) {
  const Tensor& xt = ctx.tape.value(x);
  if (xt.rank() != 2)
    throw ShapeError("network input must be [batch, features], got " +
                     xt.shape_str());
  if (input_features_ != 0 && xt.shape()[1] != input_features_)
    throw ShapeError("network expects " + std::to_string(input_features_) +
                     " input features, got " + std::to_string(xt.shape()[1]));
  std::size_t b = xt.shape()[0], f = xt.shape()[1];
  ValueId y = ops::reshape(ctx.tape, x, {b, f, 1});
  y = stem_.forward_positions(ctx, y);
  for (Stage& s : stages_)
    y = std::visit([&](auto& blk) { return blk.forward(ctx, y); }, s);
  if (attention_) {
    AttentionLayer::Out out = attention_->forward(ctx, y);
    y = out.value;
  }
  ValueId pooled = ops::mean_time(ctx.tape, y);
  ValueId logits = head_.forward_rows(ctx, pooled);
  return ops::softmax_rows(ctx.tape, logits);
}

void Network::visit_params(const ParamVisitor& fn) {
  stem_.visit_params(fn);
  for (Stage& s : stages_)
    std::visit([&](auto& blk) { blk.visit_params(fn); }, s);
  if (attention_) attention_->visit_params(fn);
  head_.visit_params(fn);
}

void Network::visit_state(const StateVisitor& fn) {
  for (Stage& s : stages_)
    std::visit([&](auto& blk) { blk.visit_state(fn); }, s);
}

std::size_t count_params(Network& net) {
  std::size_t n = 0;
  net.visit_params([&](const std::string&, Tensor& t, const ParamInit&) {
    n += t.numel();
  });
  return n;
}

}  // namespace dualnet
