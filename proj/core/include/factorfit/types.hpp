#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace factorfit {

/// Dense 64-bit matrix. Storage order is Eigen's default; the on-disk
/// container is row-major regardless (see data_io.hpp).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

using Bytes = std::vector<std::uint8_t>;

}  // namespace factorfit
