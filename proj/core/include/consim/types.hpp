#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace consim {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Rows are patches, columns are activation dimensions.
struct ActivationMatrix {
  Matrix data;
  std::string model_id;
  std::string layer_id;
  std::string class_id;
};

// Final linear classifier: logits = a * weights + bias.
struct LinearHead {
  Matrix weights;  // d x C
  RowVector bias;  // 1 x C
  std::vector<std::string> class_labels;

  Index input_dim() const { return weights.rows(); }
  Index num_classes() const { return weights.cols(); }
  // Index of `label` in class_labels, or -1.
  Index class_index(const std::string& label) const;
};

// Throws kNonFinite if any entry is NaN or Inf.
void require_finite(const Matrix& m, const char* what);

}  // namespace consim
