#include "lapact/tensor.hpp"

#include "lapact/error.hpp"

namespace lapact::network {

void Parameters::add(const std::string &name, Tensor value) {
  if (contains(name)) throw PreconditionError("network", "duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

Tensor &Parameters::operator[](const std::string &name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("network", "no parameter named " + name);
  return values_[it->second];
}

const Tensor &Parameters::operator[](const std::string &name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("network", "no parameter named " + name);
  return values_[it->second];
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto &v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  for (std::size_t i = 0; i < size(); ++i)
    out.add(names_[i], Tensor::Zero(values_[i].rows(), values_[i].cols()));
  return out;
}

bool Parameters::same_layout(const Parameters &other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (names_[i] != other.names_[i] || values_[i].rows() != other.values_[i].rows() ||
        values_[i].cols() != other.values_[i].cols())
      return false;
  return true;
}

void Parameters::set_zero() {
  for (auto &v : values_) v.setZero();
}

void Parameters::add_scaled(const Parameters &other, double scale) {
  if (!same_layout(other)) throw PreconditionError("network", "parameter layout mismatch");
  for (std::size_t i = 0; i < size(); ++i) values_[i] += scale * other.values_[i];
}

bool Parameters::operator==(const Parameters &other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (values_[i] != other.values_[i]) return false;
  return true;
}

} // namespace lapact::network
