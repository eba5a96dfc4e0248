#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "dualnet/train.hpp"

namespace dualnet {

using nlohmann::json;

static constexpr char kCkptMagic[8] = {'D', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
static constexpr std::uint32_t kCkptVersion = 1;

static std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

void save_checkpoint(Network& net, const std::string& path,
                     const Preprocessor* pre, const TrainHistory* history) {
  const ArchitectureConfig& cfg = net.config();
  json header;
  header["arch"] = json::parse(cfg.canonical());
  header["arch_hash"] = hash_hex(cfg.hash());
  header["dtype"] = dtype_name(net.dtype());
  header["input_features"] = net.input_features();

  std::vector<double> payload;
  json params = json::array();
  net.visit_params([&](const std::string& name, Tensor& t, const ParamInit&) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"offset", payload.size()},
                      {"count", t.numel()}});
    payload.insert(payload.end(), t.data().begin(), t.data().end());
  });
  header["params"] = params;

  json state = json::array();
  net.visit_state([&](const std::string& name, std::vector<double>& v) {
    state.push_back(
        {{"name", name}, {"offset", payload.size()}, {"count", v.size()}});
    payload.insert(payload.end(), v.begin(), v.end());
  });
  header["state"] = state;

  header["preprocessor"] =
      pre ? json::parse(pre->to_json_text()) : json(nullptr);
  json hist = json::array();
  if (history) {
    for (const EpochStats& e : history->epochs)
      hist.push_back({{"loss", e.loss}, {"accuracy", e.accuracy}});
  }
  header["history"] = hist;

  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kCkptMagic, 8);
  std::uint32_t v = kCkptVersion, hlen = std::uint32_t(htext.size());
  out.write(reinterpret_cast<const char*>(&v), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), std::streamsize(htext.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(double)));
  if (!out) throw IoError("short write to '" + path + "'");
}

Network load_checkpoint(const std::string& path,
                        std::optional<Preprocessor>* pre_out,
                        TrainHistory* history_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  auto read_or_throw = [&](char* dst, std::size_t count) {
    in.read(dst, std::streamsize(count));
    if (std::size_t(in.gcount()) != count)
      throw DataError("checkpoint '" + path + "' is truncated");
  };

  char magic[8];
  read_or_throw(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw DataError("'" + path + "' is not a checkpoint file");
  std::uint32_t version, hlen;
  read_or_throw(reinterpret_cast<char*>(&version), 4);
  if (version != kCkptVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + " (expected " +
                    std::to_string(kCkptVersion) + ")");
  read_or_throw(reinterpret_cast<char*>(&hlen), 4);
  std::string htext(hlen, '\0');
  read_or_throw(htext.data(), hlen);
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::parse_error&) {
    throw DataError("checkpoint '" + path + "' has a corrupt header");
  }

  ArchitectureConfig cfg =
      ArchitectureConfig::from_json_text(header.at("arch").dump());
  std::string stored_hash = header.at("arch_hash").get<std::string>();
  if (hash_hex(cfg.hash()) != stored_hash)
    throw DataError("checkpoint '" + path +
                    "': architecture hash mismatch (header was altered?)");

  Dtype dt = dtype_from_name(header.at("dtype").get<std::string>());
  Network net = Network::build(cfg, dt);
  std::size_t input_features = header.at("input_features").get<std::size_t>();
  if (input_features != 0) net.set_input_features(input_features);

  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (raw.size() % sizeof(double) != 0)
    throw DataError("checkpoint '" + path + "' is truncated");
  std::vector<double> payload(raw.size() / sizeof(double));
  std::memcpy(payload.data(), raw.data(), raw.size());

  struct Record {
    std::vector<std::size_t> shape;
    std::size_t offset = 0, count = 0;
    bool used = false;
    bool has_shape = false;
  };
  auto read_records = [&](const char* key) {
    std::map<std::string, Record> recs;
    for (const json& r : header.at(key)) {
      Record rec;
      rec.offset = r.at("offset").get<std::size_t>();
      rec.count = r.at("count").get<std::size_t>();
      if (r.contains("shape")) {
        rec.shape = r.at("shape").get<std::vector<std::size_t>>();
        rec.has_shape = true;
      }
      if (rec.offset + rec.count > payload.size())
        throw DataError("checkpoint '" + path + "' is truncated");
      recs[r.at("name").get<std::string>()] = std::move(rec);
    }
    return recs;
  };

  std::map<std::string, Record> params = read_records("params");
  net.visit_params([&](const std::string& name, Tensor& t, const ParamInit&) {
    auto it = params.find(name);
    if (it == params.end())
      throw DataError("checkpoint '" + path + "' is missing parameter '" +
                      name + "'");
    Record& rec = it->second;
    if (rec.has_shape && rec.shape != t.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " +
                      shape_str(rec.shape) + ", architecture wants " +
                      t.shape_str());
    if (rec.count != t.numel())
      throw DataError("checkpoint parameter '" + name + "' has " +
                      std::to_string(rec.count) + " values, architecture wants " +
                      std::to_string(t.numel()));
    std::copy(payload.begin() + rec.offset,
              payload.begin() + rec.offset + rec.count, t.data().begin());
    t.quantize();
    rec.used = true;
  });
  for (const auto& [name, rec] : params) {
    if (!rec.used)
      throw DataError("checkpoint parameter '" + name +
                      "' does not exist in the architecture");
  }

  std::map<std::string, Record> state = read_records("state");
  net.visit_state([&](const std::string& name, std::vector<double>& v) {
    auto it = state.find(name);
    if (it == state.end())
      throw DataError("checkpoint '" + path + "' is missing state '" + name +
                      "'");
    Record& rec = it->second;
    if (rec.count != v.size())
      throw DataError("checkpoint state '" + name + "' has " +
                      std::to_string(rec.count) + " values, expected " +
                      std::to_string(v.size()));
    std::copy(payload.begin() + rec.offset,
              payload.begin() + rec.offset + rec.count, v.begin());
    rec.used = true;
  });
  for (const auto& [name, rec] : state) {
    if (!rec.used)
      throw DataError("checkpoint state '" + name +
                      "' does not exist in the architecture");
  }

  if (pre_out) {
    if (header.at("preprocessor").is_null())
      *pre_out = std::nullopt;
    else
      *pre_out =
          Preprocessor::from_json_text(header.at("preprocessor").dump());
  }
  if (history_out) {
    history_out->epochs.clear();
    for (const json& e : header.at("history"))
      history_out->epochs.push_back(
          {e.at("loss").get<double>(), e.at("accuracy").get<double>()});
  }
  return net;
}

}  // namespace dualnet
