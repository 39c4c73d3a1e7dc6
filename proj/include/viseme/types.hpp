// Dense Eigen aliases used across the library. Signal processing runs in
// double; trial tensors and model parameters are stored in float.
#pragma once

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

namespace viseme {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;

using MatD = Mat<double>;
using MatF = Mat<float>;
using VecD = Vec<double>;
using VecF = Vec<float>;
using ArrD = Arr<double>;
using ArrF = Arr<float>;
using MatI = Eigen::MatrixXi;

using Index = Eigen::Index;

}  // namespace viseme
