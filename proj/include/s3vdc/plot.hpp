// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "s3vdc/types.hpp"

namespace s3vdc {

// 2-D scatter colored by cluster id, rasterized to PNG.
void write_scatter_png(const std::string& path, const MatD& points, const std::vector<int>& clusters,
                       int width = 900, int height = 900);

}  // namespace s3vdc
