#include "icf/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace icf {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

uint64_t fnv1a_update(uint64_t h, const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

json tensor_to_json(const ParamTensor& t) {
  json j;
  j["rows"] = t.value.rows;
  j["cols"] = t.value.cols;
  j["data"] = t.value.data;
  return j;
}

void tensor_from_json(const json& j, ParamTensor& t) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  if (rows != t.value.rows || cols != t.value.cols)
    throw CheckpointError("tensor '" + t.name + "' has shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", expected " + t.value.shape_str());
  const auto& data = j.at("data");
  if (data.size() != t.value.size())
    throw CheckpointError("tensor '" + t.name + "' data length mismatch");
  t.value.data = data.get<std::vector<double>>();
  t.grad = Matrix(rows, cols);
  t.adam_m = Matrix(rows, cols);
  t.adam_v = Matrix(rows, cols);
  t.step_count = 0;
}

json graph_to_json(const GcGraph& g) {
  json j;
  j["levels"] = g.levels;
  j["user_items"] = g.user_items;
  j["item_users"] = g.item_users;
  return j;
}

GcGraph graph_from_json(const json& j) {
  GcGraph g;
  g.levels = j.at("levels").get<int>();
  g.user_items = j.at("user_items").get<std::vector<std::vector<std::vector<int>>>>();
  g.item_users = j.at("item_users").get<std::vector<std::vector<std::vector<int>>>>();
  return g;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << contents;
    if (!out) throw Error("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("cannot rename '" + tmp + "' to '" + path + "'");
}

uint64_t model_checksum(const MfParams& mf) {
  uint64_t h = 1469598103934665603ULL;
  for (const ParamTensor* t : mf.all_tensors())
    h = fnv1a_update(h, t->value.data.data(), t->value.size() * sizeof(double));
  h = fnv1a_update(h, &mf.global_bias, sizeof(double));
  return h;
}

void save_mf_checkpoint(const MfParams& mf, const std::string& path,
                        const std::string& config_hash, const std::string& config_echo_json) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "mf";
  j["backbone"] = to_string(mf.backbone);
  j["feedback"] = mf.feedback == Feedback::Explicit ? "explicit" : "implicit";
  j["dim"] = mf.dim;
  j["hidden"] = mf.hidden;
  j["num_items"] = mf.num_items;
  j["key_users"] = mf.key_users;
  j["global_bias"] = mf.global_bias;
  j["config_hash"] = config_hash;
  if (!config_echo_json.empty()) j["config_echo"] = json::parse(config_echo_json);
  json tensors;
  for (const ParamTensor* t : mf.all_tensors()) tensors[t->name] = tensor_to_json(*t);
  j["tensors"] = std::move(tensors);
  if (mf.backbone == Backbone::Gc) j["graph"] = graph_to_json(mf.graph);
  j["checksum"] = model_checksum(mf);
  atomic_write_file(path, j.dump(1));
}

namespace {

MfParams mf_from_json(const json& j) {
  if (j.at("kind").get<std::string>() != "mf")
    throw CheckpointError("expected an mf checkpoint");
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version");

  const Backbone backbone = backbone_from_string(j.at("backbone").get<std::string>());
  const Feedback fb = j.at("feedback").get<std::string>() == "explicit" ? Feedback::Explicit
                                                                        : Feedback::Implicit;
  const int dim = j.at("dim").get<int>();
  const int hidden = j.at("hidden").get<int>();
  const int num_items = j.at("num_items").get<int>();
  std::vector<int> key_users = j.at("key_users").get<std::vector<int>>();
  const int levels = fb == Feedback::Explicit ? 5 : 1;

  MfParams mf(backbone, fb, static_cast<int>(key_users.size()), num_items, dim, hidden, levels);
  mf.key_users = std::move(key_users);
  if (backbone == Backbone::Gc) {
    Rng dummy(0);
    mf.gc.init(dim, hidden, levels, dummy);
    mf.graph = graph_from_json(j.at("graph"));
  }
  mf.global_bias = j.at("global_bias").get<double>();

  const json& tensors = j.at("tensors");
  for (ParamTensor* t : mf.all_tensors()) {
    if (!tensors.contains(t->name))
      throw CheckpointError("checkpoint is missing tensor '" + t->name + "'");
    tensor_from_json(tensors.at(t->name), *t);
  }

  const uint64_t recorded = j.at("checksum").get<uint64_t>();
  if (recorded != model_checksum(mf))
    throw CheckpointError("checkpoint checksum mismatch; file corrupted?");
  return mf;
}

}  // namespace

MfParams load_mf_checkpoint(const std::string& path, std::string* config_hash_out) {
  json j = load_json_file(path);
  try {
    if (config_hash_out) *config_hash_out = j.value("config_hash", std::string());
    return mf_from_json(j);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed mf checkpoint '" + path + "': " + e.what());
  }
}

void save_relation_checkpoint(const RelationParams& rel, const MfParams& finetuned,
                              uint64_t mf_checksum, const std::string& path,
                              const std::string& config_hash,
                              const std::string& config_echo_json) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "relation";
  j["heads"] = rel.heads;
  j["dim"] = rel.dim;
  j["normalization"] = to_string(rel.normalization);
  j["mf_checksum"] = mf_checksum;
  j["config_hash"] = config_hash;
  if (!config_echo_json.empty()) j["config_echo"] = json::parse(config_echo_json);

  json tensors;
  for (const ParamTensor* t : rel.tensors()) tensors[t->name] = tensor_to_json(*t);
  j["tensors"] = std::move(tensors);
  json samples = json::array();
  for (const RelationHead& h : rel.head) samples.push_back(h.key_sample);
  j["key_samples"] = std::move(samples);

  // finetuned predictor rides along so eval needs only the two checkpoints
  json theta;
  for (const ParamTensor* t : const_cast<MfParams&>(finetuned).predictor_tensors())
    theta[t->name] = tensor_to_json(*t);
  j["finetuned_predictor"] = std::move(theta);

  atomic_write_file(path, j.dump(1));
}

RelationParams load_relation_checkpoint(const std::string& path, MfParams& model,
                                        uint64_t* recorded_mf_checksum) {
  json j = load_json_file(path);
  try {
    if (j.at("kind").get<std::string>() != "relation")
      throw CheckpointError("expected a relation checkpoint");
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw CheckpointError("unsupported checkpoint format version");

    const int heads = j.at("heads").get<int>();
    const int dim = j.at("dim").get<int>();
    if (dim != model.dim)
      throw CheckpointError("relation dim " + std::to_string(dim) + " does not match model dim " +
                            std::to_string(model.dim));
    RelationParams rel(heads, dim, norm_from_string(j.at("normalization").get<std::string>()));

    const json& tensors = j.at("tensors");
    for (ParamTensor* t : rel.tensors()) {
      if (!tensors.contains(t->name))
        throw CheckpointError("relation checkpoint is missing tensor '" + t->name + "'");
      tensor_from_json(tensors.at(t->name), *t);
    }
    const json& samples = j.at("key_samples");
    if (static_cast<int>(samples.size()) != heads)
      throw CheckpointError("relation checkpoint key_samples count mismatch");
    for (int l = 0; l < heads; ++l) {
      rel.head[l].key_sample = samples[l].get<std::vector<int>>();
      for (int row : rel.head[l].key_sample)
        if (row < 0 || row >= model.P.value.rows)
          throw CheckpointError("relation key sample row out of range for this model");
    }

    const json& theta = j.at("finetuned_predictor");
    for (ParamTensor* t : model.predictor_tensors()) {
      if (!theta.contains(t->name))
        throw CheckpointError("relation checkpoint is missing predictor tensor '" + t->name + "'");
      tensor_from_json(theta.at(t->name), *t);
    }

    if (recorded_mf_checksum) *recorded_mf_checksum = j.at("mf_checksum").get<uint64_t>();
    return rel;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed relation checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace icf
