#pragma once

#include "xdgmm/types.hpp"

#include <string>

namespace xdgmm {

// Model checkpoint: {"k":K,"d":d,"alpha":[...],"means":[[...]],
// "covs":[[[...]]]} with 17-significant-digit floats, so a reload
// reproduces the parameters bit for bit.
void save_model(const GmmParams& p, const std::string& path);
GmmParams load_model(const std::string& path);

}  // namespace xdgmm
