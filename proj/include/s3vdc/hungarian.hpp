// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "s3vdc/types.hpp"

namespace s3vdc {

// Optimal assignment on a square cost matrix (minimization); returns the
// column assigned to each row. O(n^3).
std::vector<int> min_cost_assignment(const MatD& cost);

}  // namespace s3vdc
