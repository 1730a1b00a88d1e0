#ifndef ICF_CHECKPOINT_HPP
#define ICF_CHECKPOINT_HPP

#include <string>

#include "icf/relation.hpp"

namespace icf {

// FNV-1a over the little-endian bytes of every tensor in order; identifies a
// parameter state so dependent checkpoints can refuse mismatched inputs.
uint64_t model_checksum(const MfParams& mf);

void save_mf_checkpoint(const MfParams& mf, const std::string& path,
                        const std::string& config_hash, const std::string& config_echo_json);
MfParams load_mf_checkpoint(const std::string& path, std::string* config_hash_out = nullptr);

void save_relation_checkpoint(const RelationParams& rel, const MfParams& finetuned,
                              uint64_t mf_checksum, const std::string& path,
                              const std::string& config_hash,
                              const std::string& config_echo_json);

// Loads the relation parameters and overwrites `model`'s predictor tensors
// with the finetuned ones stored alongside them. Throws CheckpointError when
// the recorded stage-1 checksum differs from model_checksum(model) at save
// time (pass the pristine stage-1 model).
RelationParams load_relation_checkpoint(const std::string& path, MfParams& model,
                                        uint64_t* recorded_mf_checksum = nullptr);

// write-temp-then-rename
void atomic_write_file(const std::string& path, const std::string& contents);

}  // namespace icf

#endif
