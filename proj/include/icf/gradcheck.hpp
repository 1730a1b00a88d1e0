#ifndef ICF_GRADCHECK_HPP
#define ICF_GRADCHECK_HPP

#include <string>
#include <vector>

namespace icf {

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  int probes = 0;
};

// Finite-difference checks of every manual gradient against the exact batch
// code paths the trainers use: the three predictor backbones, the relation
// model under both normalization modes, and the contrastive loss. Each entry
// must come in under 1e-4.
std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, int probes = 40,
                                                 double fd_epsilon = 1e-4);

}  // namespace icf

#endif
