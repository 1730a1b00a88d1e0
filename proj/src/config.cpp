#include "icf/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace icf {

using nlohmann::json;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Pulls known keys out of a section and rejects anything left over.
class Section {
 public:
  Section(const json& parent, const std::string& name) : name_(name) {
    if (parent.contains(name)) {
      if (!parent.at(name).is_object())
        throw ConfigError("config section '" + name + "' must be an object");
      obj_ = parent.at(name);
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    if (obj_.contains(key)) {
      try {
        out = obj_.at(key).get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
      }
      taken_.insert(key);
    }
  }

  void get_string(const char* key, std::string& out) { get<std::string>(key, out); }

  void require(const char* key) const {
    if (!obj_.contains(key))
      throw ConfigError("config is missing required key '" + name_ + "." + key + "'");
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (taken_.find(it.key()) == taken_.end())
        throw ConfigError("unknown config key '" + name_ + "." + it.key() + "'");
  }

 private:
  std::string name_;
  json obj_ = json::object();
  std::set<std::string> taken_;
};

}  // namespace

TrainConfig parse_config_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");

  static const std::set<std::string> kSections = {"dataset", "split",  "model", "relation",
                                                  "train",   "eval",   "seeds", "threads"};
  for (auto it = root.begin(); it != root.end(); ++it)
    if (kSections.find(it.key()) == kSections.end())
      throw ConfigError("unknown config key '" + it.key() + "'");

  TrainConfig c;

  {
    Section s(root, "dataset");
    s.require("path");
    std::string path, format = "ml100k_udata", feedback = "explicit";
    s.get_string("path", path);
    s.get_string("format", format);
    s.get_string("feedback", feedback);
    s.finish();
    c.dataset_path = path;
    c.format = format_from_string(format);
    if (feedback != "explicit" && feedback != "implicit")
      throw ConfigError("dataset.feedback must be 'explicit' or 'implicit'");
    c.feedback = feedback == "explicit" ? Feedback::Explicit : Feedback::Implicit;
  }
  {
    Section s(root, "split");
    std::string strategy = "threshold";
    s.get("test_fraction", c.test_fraction);
    s.get_string("strategy", strategy);
    s.get("delta", c.delta);
    s.get("gamma", c.gamma);
    s.get("negative_ratio", c.negative_ratio);
    s.finish();
    if (strategy == "threshold")
      c.strategy = PartitionStrategy::Threshold;
    else if (strategy == "random")
      c.strategy = PartitionStrategy::Random;
    else
      throw ConfigError("split.strategy must be 'threshold' or 'random'");
  }
  {
    Section s(root, "model");
    std::string backbone = "nn";
    s.get_string("backbone", backbone);
    s.get("dim", c.dim);
    s.get("hidden", c.hidden);
    s.get("strict_bias", c.strict_bias);
    s.get("gc_neighbor_cap", c.gc_neighbor_cap);
    s.finish();
    c.backbone = backbone_from_string(backbone);
    if (c.dim <= 0) throw ConfigError("model.dim must be positive");
    if (c.hidden <= 0) throw ConfigError("model.hidden must be positive");
  }
  {
    Section s(root, "relation");
    std::string mode = "interpolation", norm = "softmax";
    s.get_string("mode", mode);
    s.get("heads", c.heads);
    s.get("sample_size", c.sample_size);
    s.get_string("normalization", norm);
    s.get("lambda", c.lambda);
    s.get("fallback_items", c.fallback_items);
    s.get("resample_keys_each_epoch", c.resample_keys_each_epoch);
    s.get("paper_sign_contrastive", c.paper_sign_contrastive);
    s.finish();
    c.mode = adapt_mode_from_string(mode);
    c.normalization = norm_from_string(norm);
    if (c.heads <= 0) throw ConfigError("relation.heads must be positive");
    if (c.sample_size <= 0) throw ConfigError("relation.sample_size must be positive");
  }
  {
    Section s(root, "train");
    s.get("learning_rate", c.learning_rate);
    s.get("batch_size", c.batch_size);
    s.get("weight_decay", c.weight_decay);
    s.get("max_epochs", c.max_epochs);
    s.get("patience", c.patience);
    s.get("adapt_learning_rate", c.adapt_learning_rate);
    s.get("adapt_batch_size", c.adapt_batch_size);
    s.get("adapt_max_epochs", c.adapt_max_epochs);
    s.get("adapt_patience", c.adapt_patience);
    s.finish();
    if (c.learning_rate <= 0.0) throw ConfigError("train.learning_rate must be positive");
    if (c.batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (c.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (c.max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  }
  {
    Section s(root, "eval");
    s.get("ndcg_k", c.ndcg_k);
    s.finish();
  }
  {
    Section s(root, "seeds");
    s.get("split", c.split_seed);
    s.get("init", c.init_seed);
    s.get("shuffle", c.shuffle_seed);
    s.finish();
  }
  if (root.contains("threads")) {
    if (!root.at("threads").is_number_integer())
      throw ConfigError("config key 'threads' must be an integer");
    c.threads = root.at("threads").get<int>();
  }
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_json(text);
}

PretrainOptions TrainConfig::pretrain_options() const {
  PretrainOptions o;
  o.backbone = backbone;
  o.dim = dim;
  o.hidden = hidden;
  o.learning_rate = learning_rate;
  o.batch_size = batch_size;
  o.weight_decay = weight_decay;
  o.max_epochs = max_epochs;
  o.patience = patience;
  o.strict_bias = strict_bias;
  o.gc_neighbor_cap = gc_neighbor_cap;
  o.init_seed = init_seed;
  o.shuffle_seed = shuffle_seed;
  return o;
}

AdaptOptions TrainConfig::adapt_options() const {
  AdaptOptions o;
  o.mode = mode;
  o.heads = heads;
  o.sample_size = sample_size;
  o.normalization = normalization;
  o.lambda = lambda;
  o.learning_rate = adapt_learning_rate;
  o.batch_size = adapt_batch_size;
  o.max_epochs = adapt_max_epochs;
  o.patience = adapt_patience;
  o.fallback_items = fallback_items;
  o.resample_keys_each_epoch = resample_keys_each_epoch;
  o.paper_sign_contrastive = paper_sign_contrastive;
  o.gc_neighbor_cap = gc_neighbor_cap;
  o.init_seed = mix_seed(init_seed, 0xada);
  o.shuffle_seed = mix_seed(shuffle_seed, 0xada);
  return o;
}

std::string TrainConfig::pretrain_section_json() const {
  json j;
  j["dataset"] = {{"path", dataset_path},
                  {"format", format == DataFormat::Ml100kUData ? "ml100k_udata" : "generic_csv"},
                  {"feedback", feedback == Feedback::Explicit ? "explicit" : "implicit"}};
  j["split"] = {{"test_fraction", test_fraction},
                {"strategy", strategy == PartitionStrategy::Threshold ? "threshold" : "random"},
                {"delta", delta},
                {"gamma", gamma}};
  j["model"] = {{"backbone", to_string(backbone)},
                {"dim", dim},
                {"hidden", hidden},
                {"strict_bias", strict_bias},
                {"gc_neighbor_cap", gc_neighbor_cap}};
  j["train"] = {{"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"weight_decay", weight_decay},
                {"max_epochs", max_epochs},
                {"patience", patience}};
  j["seeds"] = {{"split", split_seed}, {"init", init_seed}, {"shuffle", shuffle_seed}};
  return j.dump();
}

std::string TrainConfig::pretrain_config_hash() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(pretrain_section_json())));
  return buf;
}

}  // namespace icf
