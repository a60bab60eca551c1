#pragma once

#include <vector>

namespace mrg {

using Vec = std::vector<double>;

}  // namespace mrg
