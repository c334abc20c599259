#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lapact::network {

using Tensor = Eigen::MatrixXd;

// Ordered collection of named tensors. Insertion order is the serialization
// and optimizer order.
class Parameters {
public:
  void add(const std::string &name, Tensor value);

  bool contains(const std::string &name) const { return index_.count(name) != 0; }
  Tensor &operator[](const std::string &name);
  const Tensor &operator[](const std::string &name) const;

  std::size_t size() const { return values_.size(); }
  const std::string &name(std::size_t i) const { return names_[i]; }
  Tensor &value(std::size_t i) { return values_[i]; }
  const Tensor &value(std::size_t i) const { return values_[i]; }
  const std::vector<std::string> &names() const { return names_; }

  std::size_t scalar_count() const;
  // Same names and shapes, all zeros.
  Parameters zeros_like() const;
  bool same_layout(const Parameters &other) const;
  void set_zero();
  // this += scale * other; layouts must match.
  void add_scaled(const Parameters &other, double scale);

  bool operator==(const Parameters &other) const;

private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

} // namespace lapact::network
