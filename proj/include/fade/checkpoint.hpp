#pragma once

#include <string>

#include "fade/net.hpp"

namespace fade {

// Network checkpoint: LE binary, header (magic "FDNT", version, layer count)
// followed by per layer: id, shape rank + dims, raw 32-bit values. The net
// config rides along so a checkpoint reconstructs the architecture.
void save_checkpoint(const DenoiserNetF& net, const std::string& path);
DenoiserNetF load_checkpoint(const std::string& path);

}  // namespace fade
