#ifndef ICF_CONFIG_HPP
#define ICF_CONFIG_HPP

#include <cstdint>
#include <string>

#include "icf/dataset.hpp"
#include "icf/mf.hpp"
#include "icf/relation.hpp"

namespace icf {

// Declarative experiment configuration; see docs/config.md for the schema.
// Unknown keys anywhere in the file are rejected.
struct TrainConfig {
  // dataset
  std::string dataset_path;
  DataFormat format = DataFormat::Ml100kUData;
  Feedback feedback = Feedback::Explicit;

  // split
  double test_fraction = 0.1;
  PartitionStrategy strategy = PartitionStrategy::Threshold;
  int delta = 30;
  double gamma = 0.5;
  int negative_ratio = 5;

  // model
  Backbone backbone = Backbone::Nn;
  int dim = 16;
  int hidden = 32;
  bool strict_bias = false;
  int gc_neighbor_cap = 50;

  // relation
  AdaptMode mode = AdaptMode::Interpolation;
  int heads = 4;
  int sample_size = 200;
  AttentionNorm normalization = AttentionNorm::Softmax;
  double lambda = 10.0;
  int fallback_items = 10;
  bool resample_keys_each_epoch = false;
  bool paper_sign_contrastive = false;

  // train
  double learning_rate = 0.001;
  int batch_size = 512;
  double weight_decay = 0.0;
  int max_epochs = 100;
  int patience = 5;
  double adapt_learning_rate = 0.001;
  int adapt_batch_size = 512;
  int adapt_max_epochs = 100;
  int adapt_patience = 5;

  // eval
  int ndcg_k = 0;

  // seeds
  uint64_t split_seed = 1;
  uint64_t init_seed = 2;
  uint64_t shuffle_seed = 3;

  int threads = 0;

  PretrainOptions pretrain_options() const;
  AdaptOptions adapt_options() const;

  // Canonical JSON of the sections that determine a pretrained model
  // (dataset, split, model, train, seeds) and its FNV-1a hash, used to refuse
  // checkpoints built from a different pretraining setup.
  std::string pretrain_section_json() const;
  std::string pretrain_config_hash() const;
};

TrainConfig load_config(const std::string& path);
TrainConfig parse_config_json(const std::string& text);

}  // namespace icf

#endif
