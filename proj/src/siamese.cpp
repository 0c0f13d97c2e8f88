#include "dhsl/siamese.hpp"

#include <algorithm>

namespace dhsl {

template <typename T>
FeatureMatrix<T> SiameseExtractor<T>::flatten(const BasicTensor4<T>& out, std::size_t begin,
                                              std::size_t count) const {
  const std::size_t d = out.shape().sample_size();
  const auto first = out.data().begin() + static_cast<std::ptrdiff_t>(begin * d);
  return FeatureMatrix<T>(count, d, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count * d)));
}

template <typename T>
BasicTensor4<T> SiameseExtractor<T>::unflatten(const FeatureMatrix<T>& a,
                                               const FeatureMatrix<T>* b) const {
  std::vector<T> data(a.data);
  if (b != nullptr) data.insert(data.end(), b->data.begin(), b->data.end());
  return BasicTensor4<T>(out_shape_, std::move(data));
}

template <typename T>
FeaturePairs<T> SiameseExtractor<T>::extract_pair(const BasicTensor4<T>& first,
                                                  const BasicTensor4<T>& second, Mode mode) {
  if (!(first.shape() == second.shape())) {
    throw ShapeError("extract_pair: branch inputs differ, " + first.shape().str() + " vs " +
                     second.shape().str());
  }
  const std::size_t n = first.shape().n;
  const BasicTensor4<T> out = stack_->forward(concat_batch(first, second), mode, 2);
  out_shape_ = out.shape();
  cached_ = Cached::pair;
  cached_rows_ = n;
  return {flatten(out, 0, n), flatten(out, n, n)};
}

template <typename T>
FeatureMatrix<T> SiameseExtractor<T>::extract_single(const BasicTensor4<T>& images, Mode mode) {
  const BasicTensor4<T> out = stack_->forward(images, mode, 1);
  out_shape_ = out.shape();
  cached_ = Cached::single;
  cached_rows_ = images.shape().n;
  return flatten(out, 0, images.shape().n);
}

template <typename T>
void SiameseExtractor<T>::backward_pair(const FeatureMatrix<T>& grad_x1,
                                        const FeatureMatrix<T>& grad_x2) {
  if (cached_ != Cached::pair) {
    throw StateError("backward_pair called without a cached pair forward");
  }
  const std::size_t d = out_shape_.sample_size();
  if (grad_x1.rows != cached_rows_ || grad_x2.rows != cached_rows_ || grad_x1.cols != d ||
      grad_x2.cols != d) {
    throw ShapeError("backward_pair: gradients do not match the cached " +
                     std::to_string(cached_rows_) + " x " + std::to_string(d) + " features");
  }
  stack_->backward(unflatten(grad_x1, &grad_x2));
}

template <typename T>
void SiameseExtractor<T>::backward_single(const FeatureMatrix<T>& grad_x) {
  if (cached_ != Cached::single) {
    throw StateError("backward_single called without a cached single-branch forward");
  }
  if (grad_x.rows != cached_rows_ || grad_x.cols != out_shape_.sample_size()) {
    throw ShapeError("backward_single: gradient does not match cached features");
  }
  stack_->backward(unflatten(grad_x, nullptr));
}

template class SiameseExtractor<float>;
template class SiameseExtractor<double>;

}  // namespace dhsl
