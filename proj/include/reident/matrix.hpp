#pragma once

#include <Eigen/Dense>

namespace reident {

/// One sample per row; rows are contiguous so a row can be viewed as a
/// (channels, height, width) tensor.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace reident
