#include "mstts/autodiff/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace mstts::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
ConstMatMap<T> cmap(const T* p, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename T>
MatMap<T> mmap(T* p, std::size_t r, std::size_t c) {
  return MatMap<T>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
Tape<T>* tape_for(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
void check_finite(const Tensor<T>& out, std::string_view op) {
  if (!FiniteCheckScope::enabled()) return;
  for (T v : out.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op),
                           "non-finite value produced by primitive '" + std::string(op) + "'");
    }
  }
}

// Gradient span of a parent, or empty when it takes no gradient.
template <typename T>
std::span<T> grad_of(const ImplPtr<T>& p) {
  if (!p || !p->requires_grad) return {};
  return p->grad_buffer();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Rows/cols of a matrix, treating rank-1 as a single row.
std::pair<std::size_t, std::size_t> as_rows(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ShapeError("expected rank 1 or 2, got " + shape_str(s));
}

template <typename T>
Tensor<T> unary(const Tensor<T>& a, std::string_view op, T (*f)(T), T (*df_from_y)(T)) {
  std::vector<T> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor<T> y(a.shape(), std::move(out));
  check_finite(y, op);
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    const TensorImpl<T>* yi = y.impl();
    tape->record(op, y, [ai, yi, df_from_y](std::span<const T> g) {
      auto ga = grad_of(ai);
      if (ga.empty()) return;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_y(yi->data[i]);
    });
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " +
                     shape_str(b.shape()));
  }
  Tensor<T> out(Shape{m, n});
  mmap(out.mutable_data().data(), m, n).noalias() =
      cmap(a.data().data(), m, k) * cmap(b.data().data(), k, n);
  check_finite(out, "matmul");
  if (auto* tape = tape_for<T>({&a, &b})) {
    ImplPtr<T> ai = a.impl_ptr(), bi = b.impl_ptr();
    tape->record("matmul", out, [ai, bi, m, k, n](std::span<const T> g) {
      auto gm = cmap(g.data(), m, n);
      if (auto ga = grad_of(ai); !ga.empty()) {
        mmap(ga.data(), m, k).noalias() += gm * cmap(bi->data.data(), k, n).transpose();
      }
      if (auto gb = grad_of(bi); !gb.empty()) {
        mmap(gb.data(), k, n).noalias() += cmap(ai->data.data(), m, k).transpose() * gm;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(w.shape(), 2, "linear");
  const auto [n, in] = as_rows(x.shape());
  const std::size_t out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  if (bias.defined() && bias.size() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{n, out_dim};
  Tensor<T> out(shape);
  auto y = mmap(out.mutable_data().data(), n, out_dim);
  y.noalias() = cmap(x.data().data(), n, in) * cmap(w.data().data(), out_dim, in).transpose();
  if (bias.defined()) {
    y.rowwise() += cmap(bias.data().data(), 1, out_dim).row(0);
  }
  check_finite(out, "linear");
  if (auto* tape = tape_for<T>({&x, &w, &bias})) {
    ImplPtr<T> xi = x.impl_ptr(), wi = w.impl_ptr();
    ImplPtr<T> bi = bias.defined() ? bias.impl_ptr() : nullptr;
    tape->record("linear", out, [xi, wi, bi, n, in, out_dim](std::span<const T> g) {
      auto gm = cmap(g.data(), n, out_dim);
      if (auto gx = grad_of(xi); !gx.empty()) {
        mmap(gx.data(), n, in).noalias() += gm * cmap(wi->data.data(), out_dim, in);
      }
      if (auto gw = grad_of(wi); !gw.empty()) {
        mmap(gw.data(), out_dim, in).noalias() += gm.transpose() * cmap(xi->data.data(), n, in);
      }
      if (auto gb = grad_of(bi); !gb.empty()) {
        mmap(gb.data(), 1, out_dim) += gm.colwise().sum();
      }
    });
  }
  return out;
}

namespace {
template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, std::string_view op, int kind) {
  require_same(a.shape(), b.shape(), std::string(op).c_str());
  const std::size_t n = a.size();
  std::vector<T> out(n);
  auto x = a.data(), y = b.data();
  switch (kind) {
    case 0:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
      break;
    case 1:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
      break;
  }
  Tensor<T> r(a.shape(), std::move(out));
  check_finite(r, op);
  if (auto* tape = tape_for<T>({&a, &b})) {
    ImplPtr<T> ai = a.impl_ptr(), bi = b.impl_ptr();
    tape->record(op, r, [ai, bi, kind](std::span<const T> g) {
      auto ga = grad_of(ai);
      auto gb = grad_of(bi);
      const std::size_t n = g.size();
      if (kind == 2) {
        if (!ga.empty())
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bi->data[i];
        if (!gb.empty())
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * ai->data[i];
        return;
      }
      if (!ga.empty())
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (!gb.empty()) {
        const T sign = kind == 1 ? T(-1) : T(1);
        for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
      }
    });
  }
  return r;
}
}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "add", 0);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "sub", 1);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "mul", 2);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor<T> r(a.shape(), std::move(out));
  check_finite(r, "scale");
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("scale", r, [ai, factor](std::span<const T> g) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  require_rank(a.shape(), 2, "add_rowvec");
  const std::size_t n = a.dim(0), k = a.dim(1);
  if (v.size() != k || v.rank() > 2 || (v.rank() == 2 && v.dim(0) != 1)) {
    throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " + row " + shape_str(v.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vd = v.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += vd[j];
  Tensor<T> r(a.shape(), std::move(out));
  check_finite(r, "add_rowvec");
  if (auto* tape = tape_for<T>({&a, &v})) {
    ImplPtr<T> ai = a.impl_ptr(), vi = v.impl_ptr();
    tape->record("add_rowvec", r, [ai, vi, n, k](std::span<const T> g) {
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (auto gv = grad_of(vi); !gv.empty())
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) gv[j] += g[i * k + j];
    });
  }
  return r;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T y) { return y > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  auto r = Tensor<T>::scalar(acc);
  check_finite(r, "sum");
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("sum", r, [ai](std::span<const T> g) {
      auto ga = grad_of(ai);
      for (auto& v : ga) v += g[0];
    });
  }
  return r;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.size());
  auto r = Tensor<T>::scalar(acc * inv);
  check_finite(r, "mean");
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("mean", r, [ai, inv](std::span<const T> g) {
      auto ga = grad_of(ai);
      for (auto& v : ga) v += g[0] * inv;
    });
  }
  return r;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const std::size_t rank = parts[0].rank();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw ShapeError("concat: unsupported axis " + std::to_string(axis) + " for shape " +
                     shape_str(parts[0].shape()));
  }
  // View everything as (outer x width_i) blocks; rank-1 is a single row.
  const std::size_t outer = (rank == 2 && axis == 1) ? parts[0].dim(0) : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    if (rank == 2) {
      const std::size_t other = axis == 0 ? 1 : 0;
      if (p.dim(other) != parts[0].dim(other)) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " vs " +
                         shape_str(parts[0].shape()) + " along axis " + std::to_string(axis));
      }
    }
    widths.push_back(p.size() / outer);
    total += p.size() / outer;
  }
  std::vector<T> out(outer * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto src = parts[i].data();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(src.begin() + r * widths[i], widths[i], out.begin() + r * total + offset);
    }
    offset += widths[i];
  }
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const auto& p : parts) shape[axis] += p.dim(axis);
  Tensor<T> r(shape, std::move(out));
  check_finite(r, "concat");
  Tape<T>* tape = Tape<T>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    std::vector<ImplPtr<T>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    tape->record("concat", r, [impls, widths, outer, total](std::span<const T> g) {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < impls.size(); ++i) {
        if (auto gp = grad_of(impls[i]); !gp.empty()) {
          for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t j = 0; j < widths[i]; ++j)
              gp[r * widths[i] + j] += g[r * total + offset + j];
        }
        offset += widths[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  return concat<T>(std::span<const Tensor<T>>(parts.begin(), parts.size()), axis);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const std::size_t rank = a.rank();
  if (rank == 0 || rank > 2 || axis >= rank || begin >= end || end > a.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const std::size_t outer = (rank == 2 && axis == 1) ? a.dim(0) : 1;
  const std::size_t in_width = a.size() / outer;
  const std::size_t unit = (rank == 2 && axis == 0) ? a.dim(1) : 1;
  const std::size_t start = begin * unit, width = (end - begin) * unit;
  std::vector<T> out(outer * width);
  auto src = a.data();
  for (std::size_t r = 0; r < outer; ++r) {
    std::copy_n(src.begin() + r * in_width + start, width, out.begin() + r * width);
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  Tensor<T> r(shape, std::move(out));
  check_finite(r, "slice");
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("slice", r, [ai, outer, in_width, start, width](std::span<const T> g) {
      auto ga = grad_of(ai);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t j = 0; j < width; ++j) ga[r * in_width + start + j] += g[r * width + j];
    });
  }
  return r;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis,
                             std::span<const std::size_t> sizes) {
  if (a.rank() == 0 || axis >= a.rank()) throw ShapeError("split: bad axis");
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != a.dim(axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()) + " has extent " +
                     std::to_string(a.dim(axis)));
  }
  std::vector<Tensor<T>> out;
  std::size_t begin = 0;
  for (auto s : sizes) {
    out.push_back(slice(a, axis, begin, begin + s));
    begin += s;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis,
                             std::initializer_list<std::size_t> sizes) {
  return split<T>(a, axis, std::span<const std::size_t>(sizes.begin(), sizes.size()));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> r(Shape{n, m});
  mmap(r.mutable_data().data(), n, m) = cmap(a.data().data(), m, n).transpose();
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("transpose", r, [ai, m, n](std::span<const T> g) {
      if (auto ga = grad_of(ai); !ga.empty()) {
        mmap(ga.data(), m, n) += cmap(g.data(), n, m).transpose();
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> r(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("reshape", r, [ai](std::span<const T> g) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> repeat(const Tensor<T>& a, std::size_t axis, std::size_t n) {
  if (n == 0) throw EmptyInputError("repeat: count must be positive");
  const std::size_t d = a.size();
  const bool ok = a.rank() == 1 || (a.rank() == 2 && (axis == 1 ? a.dim(1) == 1 : a.dim(0) == 1));
  if (!ok || axis > 1) {
    throw ShapeError("repeat: cannot broadcast " + shape_str(a.shape()) + " along axis " +
                     std::to_string(axis));
  }
  std::vector<T> out(d * n);
  auto src = a.data();
  Shape shape;
  if (axis == 1) {
    for (std::size_t i = 0; i < d; ++i) std::fill_n(out.begin() + i * n, n, src[i]);
    shape = {d, n};
  } else {
    for (std::size_t r = 0; r < n; ++r) std::copy(src.begin(), src.end(), out.begin() + r * d);
    shape = {n, d};
  }
  Tensor<T> r(shape, std::move(out));
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    tape->record("repeat", r, [ai, d, n, axis](std::span<const T> g) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i] += axis == 1 ? g[i * n + j] : g[j * d + i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (a.rank() == 0 || a.rank() > 2 || axis >= a.rank()) {
    throw ShapeError("softmax: bad axis for " + shape_str(a.shape()));
  }
  std::size_t outer = 1, len = a.dim(axis), inner = 1;
  if (a.rank() == 2) {
    if (axis == 1) {
      outer = a.dim(0);
    } else {
      inner = a.dim(1);
    }
  }
  std::vector<T> out(a.size());
  auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  Tensor<T> r(a.shape(), std::move(out));
  check_finite(r, "softmax");
  if (auto* tape = tape_for<T>({&a})) {
    ImplPtr<T> ai = a.impl_ptr();
    const TensorImpl<T>* yi = r.impl();
    tape->record("softmax", r, [ai, yi, outer, len, inner](std::span<const T> g) {
      auto ga = grad_of(ai);
      const auto& y = yi->data;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            ga[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> conv1d_same(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                      std::size_t stride) {
  require_rank(x.shape(), 2, "conv1d_same");
  require_rank(w.shape(), 3, "conv1d_same");
  const std::size_t c_in = x.dim(0), len = x.dim(1);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in) {
    throw ShapeError("conv1d_same: input " + shape_str(x.shape()) + " vs filters " +
                     shape_str(w.shape()));
  }
  if (bias.size() != c_out) {
    throw ShapeError("conv1d_same: bias " + shape_str(bias.shape()) + " vs filters " +
                     shape_str(w.shape()));
  }
  if (k % 2 == 0) throw ContractError("conv1d_same: kernel width must be odd");
  if (stride == 0) throw ContractError("conv1d_same: stride must be positive");

  const std::size_t t_out = (len + stride - 1) / stride;
  const long total_pad = std::max<long>(
      static_cast<long>((t_out - 1) * stride + k) - static_cast<long>(len), 0);
  const long left = total_pad / 2;
  const std::size_t rows = c_in * k;

  // im2col: cols[(ci*k + j), t] = x[ci, t*stride + j - left]
  auto cols = std::make_shared<std::vector<T>>(rows * t_out, T(0));
  auto xd = x.data();
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    for (std::size_t j = 0; j < k; ++j) {
      T* dst = cols->data() + (ci * k + j) * t_out;
      for (std::size_t t = 0; t < t_out; ++t) {
        const long src = static_cast<long>(t * stride + j) - left;
        if (src >= 0 && src < static_cast<long>(len)) dst[t] = xd[ci * len + src];
      }
    }
  }
  Tensor<T> out(Shape{c_out, t_out});
  auto y = mmap(out.mutable_data().data(), c_out, t_out);
  y.noalias() = cmap(w.data().data(), c_out, rows) * cmap(cols->data(), rows, t_out);
  y.colwise() += cmap(bias.data().data(), c_out, 1).col(0);
  check_finite(out, "conv1d_same");

  if (auto* tape = tape_for<T>({&x, &w, &bias})) {
    ImplPtr<T> xi = x.impl_ptr(), wi = w.impl_ptr(), bi = bias.impl_ptr();
    tape->record("conv1d_same", out,
                 [xi, wi, bi, cols, c_in, c_out, k, len, t_out, rows, stride,
                  left](std::span<const T> g) {
                   auto gm = cmap(g.data(), c_out, t_out);
                   if (auto gw = grad_of(wi); !gw.empty()) {
                     mmap(gw.data(), c_out, rows).noalias() +=
                         gm * cmap(cols->data(), rows, t_out).transpose();
                   }
                   if (auto gb = grad_of(bi); !gb.empty()) {
                     mmap(gb.data(), c_out, 1) += gm.rowwise().sum();
                   }
                   if (auto gx = grad_of(xi); !gx.empty()) {
                     RowMat<T> gcols = cmap(wi->data.data(), c_out, rows).transpose() * gm;
                     for (std::size_t ci = 0; ci < c_in; ++ci) {
                       for (std::size_t j = 0; j < k; ++j) {
                         const std::size_t row = ci * k + j;
                         for (std::size_t t = 0; t < t_out; ++t) {
                           const long src = static_cast<long>(t * stride + j) - left;
                           if (src >= 0 && src < static_cast<long>(len)) {
                             gx[ci * len + src] += gcols(static_cast<Eigen::Index>(row),
                                                         static_cast<Eigen::Index>(t));
                           }
                         }
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, ChannelStats* stats) {
  require_rank(x.shape(), 2, "batch_norm");
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("batch_norm: affine " + shape_str(gamma.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  auto xd = x.data();
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  std::vector<T> out(x.size());
  if (stats != nullptr) {
    stats->mean.assign(c, 0.0);
    stats->var.assign(c, 0.0);
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* row = xd.data() + ch * n;
    double mu = 0;
    for (std::size_t t = 0; t < n; ++t) mu += row[t];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t t = 0; t < n; ++t) var += (row[t] - mu) * (row[t] - mu);
    var /= static_cast<double>(n);
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    (*inv_std)[ch] = is;
    for (std::size_t t = 0; t < n; ++t) {
      const T h = (row[t] - static_cast<T>(mu)) * is;
      (*xhat)[ch * n + t] = h;
      out[ch * n + t] = gamma[ch] * h + beta[ch];
    }
    if (stats != nullptr) {
      stats->mean[ch] = mu;
      stats->var[ch] = var;
    }
  }
  Tensor<T> r(x.shape(), std::move(out));
  check_finite(r, "batch_norm");
  if (auto* tape = tape_for<T>({&x, &gamma, &beta})) {
    ImplPtr<T> xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr();
    tape->record("batch_norm", r, [xi, gi, bi, xhat, inv_std, c, n](std::span<const T> g) {
      auto gx = grad_of(xi);
      auto gg = grad_of(gi);
      auto gb = grad_of(bi);
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t t = 0; t < n; ++t) {
          sum_g += g[ch * n + t];
          sum_gx += g[ch * n + t] * (*xhat)[ch * n + t];
        }
        if (!gg.empty()) gg[ch] += sum_gx;
        if (!gb.empty()) gb[ch] += sum_g;
        if (!gx.empty()) {
          const T k = gi->data[ch] * (*inv_std)[ch] / static_cast<T>(n);
          for (std::size_t t = 0; t < n; ++t) {
            gx[ch * n + t] += k * (static_cast<T>(n) * g[ch * n + t] - sum_g -
                                   (*xhat)[ch * n + t] * sum_gx);
          }
        }
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          std::span<const float> mean, std::span<const float> var, double eps) {
  require_rank(x.shape(), 2, "batch_norm_eval");
  const std::size_t c = x.dim(0), n = x.dim(1);
  if (gamma.size() != c || beta.size() != c || mean.size() != c || var.size() != c) {
    throw ShapeError("batch_norm_eval: statistics do not match input " + shape_str(x.shape()));
  }
  auto xd = x.data();
  std::vector<T> out(x.size());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[ch]) + eps));
    for (std::size_t t = 0; t < n; ++t) {
      const T h = (xd[ch * n + t] - static_cast<T>(mean[ch])) * inv_std[ch];
      out[ch * n + t] = gamma[ch] * h + beta[ch];
    }
  }
  Tensor<T> r(x.shape(), std::move(out));
  check_finite(r, "batch_norm_eval");
  if (auto* tape = tape_for<T>({&x, &gamma, &beta})) {
    ImplPtr<T> xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr();
    std::vector<T> mu(mean.begin(), mean.end());
    tape->record("batch_norm_eval", r,
                 [xi, gi, bi, mu = std::move(mu), inv_std, c, n](std::span<const T> g) {
                   auto gx = grad_of(xi);
                   auto gg = grad_of(gi);
                   auto gb = grad_of(bi);
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     for (std::size_t t = 0; t < n; ++t) {
                       const T gv = g[ch * n + t];
                       if (!gx.empty()) gx[ch * n + t] += gv * gi->data[ch] * inv_std[ch];
                       if (!gg.empty())
                         gg[ch] += gv * (xi->data[ch * n + t] - mu[ch]) * inv_std[ch];
                       if (!gb.empty()) gb[ch] += gv;
                     }
                   }
                 });
  }
  return r;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids) {
  require_rank(table.shape(), 2, "gather_rows");
  if (ids.empty()) throw EmptyInputError("gather_rows: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  auto src = table.data();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= vocab) {
      throw std::out_of_range("token id " + std::to_string(ids[t]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(src.begin() + ids[t] * d, d, out.begin() + t * d);
  }
  Tensor<T> r(Shape{ids.size(), d}, std::move(out));
  if (auto* tape = tape_for<T>({&table})) {
    ImplPtr<T> ti = table.impl_ptr();
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    tape->record("gather_rows", r, [ti, idv = std::move(idv), d](std::span<const T> g) {
      auto gt = grad_of(ti);
      for (std::size_t t = 0; t < idv.size(); ++t)
        for (std::size_t j = 0; j < d; ++j) gt[idv[t] * d + j] += g[t * d + j];
    });
  }
  return r;
}

template <typename T>
Tensor<T> gru_gates(const Tensor<T>& xp, std::size_t row, const Tensor<T>& hp,
                    const Tensor<T>& bias, const Tensor<T>& h_prev) {
  const std::size_t h = h_prev.size();
  const auto [xp_rows, xp_cols] = as_rows(xp.shape());
  if (xp_cols != 3 * h || row >= xp_rows || hp.size() != 3 * h || bias.size() != 3 * h) {
    throw ShapeError("gru_gates: projections " + shape_str(xp.shape()) + ", " +
                     shape_str(hp.shape()) + ", bias " + shape_str(bias.shape()) +
                     " inconsistent with state " + shape_str(h_prev.shape()));
  }
  const T* x = xp.data().data() + row * 3 * h;
  const T* u = hp.data().data();
  const T* b = bias.data().data();
  const T* hprev = h_prev.data().data();
  // saved: z, r, n, (hp_n + b_n)
  auto saved = std::make_shared<std::vector<T>>(4 * h);
  std::vector<T> out(h);
  auto sig = [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  };
  for (std::size_t i = 0; i < h; ++i) {
    const T z = sig(x[i] + u[i] + b[i]);
    const T r = sig(x[h + i] + u[h + i] + b[h + i]);
    const T hn = u[2 * h + i] + b[2 * h + i];
    const T n = std::tanh(x[2 * h + i] + r * hn);
    out[i] = (T(1) - z) * n + z * hprev[i];
    (*saved)[i] = z;
    (*saved)[h + i] = r;
    (*saved)[2 * h + i] = n;
    (*saved)[3 * h + i] = hn;
  }
  Tensor<T> result(Shape{1, h}, std::move(out));
  check_finite(result, "gru_gates");
  if (auto* tape = tape_for<T>({&xp, &hp, &bias, &h_prev})) {
    ImplPtr<T> xi = xp.impl_ptr(), ui = hp.impl_ptr(), bi = bias.impl_ptr(),
               pi = h_prev.impl_ptr();
    tape->record("gru_gates", result, [xi, ui, bi, pi, saved, h, row](std::span<const T> g) {
      auto gx = grad_of(xi);
      auto gu = grad_of(ui);
      auto gb = grad_of(bi);
      auto gp = grad_of(pi);
      const auto& s = *saved;
      for (std::size_t i = 0; i < h; ++i) {
        const T z = s[i], r = s[h + i], n = s[2 * h + i], hn = s[3 * h + i];
        const T dz = g[i] * (pi->data[i] - n);
        const T dn = g[i] * (T(1) - z);
        if (!gp.empty()) gp[i] += g[i] * z;
        const T dn_pre = dn * (T(1) - n * n);
        const T dr = dn_pre * hn;
        const T dz_pre = dz * z * (T(1) - z);
        const T dr_pre = dr * r * (T(1) - r);
        const T dhn = dn_pre * r;
        if (!gx.empty()) {
          T* gxr = gx.data() + row * 3 * h;
          gxr[i] += dz_pre;
          gxr[h + i] += dr_pre;
          gxr[2 * h + i] += dn_pre;
        }
        if (!gu.empty()) {
          gu[i] += dz_pre;
          gu[h + i] += dr_pre;
          gu[2 * h + i] += dhn;
        }
        if (!gb.empty()) {
          gb[i] += dz_pre;
          gb[h + i] += dr_pre;
          gb[2 * h + i] += dhn;
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target, std::size_t valid_rows) {
  require_same(pred.shape(), target.shape(), "masked_mse");
  const auto [rows, cols] = as_rows(pred.shape());
  if (valid_rows == 0 || valid_rows > rows) {
    throw ContractError("masked_mse: valid rows " + std::to_string(valid_rows) + " of " +
                        std::to_string(rows));
  }
  const std::size_t n = valid_rows * cols;
  const T inv = T(1) / static_cast<T>(n);
  T acc = 0;
  auto p = pred.data(), t = target.data();
  for (std::size_t i = 0; i < n; ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  auto r = Tensor<T>::scalar(acc * inv);
  check_finite(r, "masked_mse");
  if (auto* tape = tape_for<T>({&pred, &target})) {
    ImplPtr<T> pi = pred.impl_ptr(), ti = target.impl_ptr();
    tape->record("masked_mse", r, [pi, ti, n, inv](std::span<const T> g) {
      auto gp = grad_of(pi);
      auto gt = grad_of(ti);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = T(2) * inv * g[0] * (pi->data[i] - ti->data[i]);
        if (!gp.empty()) gp[i] += d;
        if (!gt.empty()) gt[i] -= d;
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (logits.size() != targets.size()) {
    throw ShapeError("bce_with_logits: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.size();
  const T inv = T(1) / static_cast<T>(n);
  auto x = logits.data();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::max(x[i], T(0)) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  auto r = Tensor<T>::scalar(acc * inv);
  check_finite(r, "bce_with_logits");
  if (auto* tape = tape_for<T>({&logits})) {
    ImplPtr<T> li = logits.impl_ptr();
    std::vector<T> y(targets.begin(), targets.end());
    tape->record("bce_with_logits", r, [li, y = std::move(y), inv](std::span<const T> g) {
      auto gl = grad_of(li);
      for (std::size_t i = 0; i < gl.size(); ++i) {
        const T v = li->data[i];
        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        gl[i] += g[0] * inv * (s - y[i]);
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  const std::size_t n = logits.size();
  if (label >= n) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " of " +
                            std::to_string(n) + " classes");
  }
  auto x = logits.data();
  const T mx = *std::max_element(x.begin(), x.end());
  T z = 0;
  for (T v : x) z += std::exp(v - mx);
  const T lse = mx + std::log(z);
  auto r = Tensor<T>::scalar(lse - x[label]);
  check_finite(r, "cross_entropy");
  if (auto* tape = tape_for<T>({&logits})) {
    ImplPtr<T> li = logits.impl_ptr();
    tape->record("cross_entropy", r, [li, lse, label](std::span<const T> g) {
      auto gl = grad_of(li);
      for (std::size_t i = 0; i < gl.size(); ++i) {
        gl[i] += g[0] * (std::exp(li->data[i] - lse) - (i == label ? T(1) : T(0)));
      }
    });
  }
  return r;
}

#define MSTTS_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_rowvec(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                          \
  template Tensor<T> concat(std::initializer_list<Tensor<T>>, std::size_t);                    \
  template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t,                         \
                                        std::span<const std::size_t>);                         \
  template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t,                         \
                                        std::initializer_list<std::size_t>);                   \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> repeat(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> conv1d_same(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                 std::size_t);                                                 \
  template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      double, ChannelStats*);                                  \
  template Tensor<T> batch_norm_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     std::span<const float>, std::span<const float>, double);  \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);              \
  template Tensor<T> gru_gates(const Tensor<T>&, std::size_t, const Tensor<T>&,                \
                               const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> masked_mse(const Tensor<T>&, const Tensor<T>&, std::size_t);              \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);                    \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);

MSTTS_INSTANTIATE_OPS(float)
MSTTS_INSTANTIATE_OPS(double)

}  // namespace mstts::ad
