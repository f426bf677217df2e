#pragma once

#include <cstdint>

#include "fade/dataset.hpp"
#include "fade/masks.hpp"
#include "fade/net.hpp"
#include "fade/schedule.hpp"

namespace fade {

// Mean absolute per-sample gradient of the diffusion loss over the forget
// split, restricted to the adapter-targetable layers. Deterministic per seed.
SaliencyMap compute_saliency(DenoiserNetF& net, const ConceptDataset& data, const NoiseSchedule& sched,
                             int n_batches, int batch_size, uint64_t seed);

// Shapes of the targeted layers, as needed by block_mask and the mask file.
std::map<std::string, std::vector<int>> target_shapes(const DenoiserNetF& net);

}  // namespace fade
