#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "chef/tensor.hpp"

namespace chef {

// Reverse-mode autodiff over a fixed primitive set. Values are computed
// eagerly as ops are recorded; backward() replays the tape once in reverse,
// accumulating gradients additively at fan-out. Node values are immutable
// once created.
template <class T>
class Tape {
 public:
  struct Var {
    int idx = -1;
    std::uint32_t tape_id = 0;
    bool valid() const { return idx >= 0; }
  };

  Tape() : id_(next_id()++) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  // ---- leaves -------------------------------------------------------------

  Var constant(TensorT<T> v) { return push(std::move(v), false, {}); }

  // Trainable leaf; receives a gradient entry even if the loss ignores it.
  Var param(TensorT<T> v) { return push(std::move(v), true, {}); }

  const TensorT<T>& value(Var v) const { return node(v).value; }

  // Gradient of the last backward() target w.r.t. v. Exactly zero if the loss
  // did not depend on v. Asking for a variable from another tape is an error.
  TensorT<T> grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad)
      throw TapeError("tape.grad: no gradient tracked for this variable (not a parameter path)");
    if (!n.touched) return TensorT<T>::zeros(n.value.shape);
    return n.grad;
  }

  // ---- primitives ----------------------------------------------------------

  Var add(Var a, Var b) {
    const TensorT<T>&A = val(a), &B = val(b);
    if (!A.same_shape(B))
      throw DimError("tape.add: shapes " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    TensorT<T> out = A;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
    Var c = push_op(std::move(out), {a, b}, "tape.add");
    if (node(c).requires_grad) {
      int ai = a.idx, bi = b.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, bi, ci](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
        });
      };
    }
    return c;
  }

  // x: [R x C], bias: [C]; adds bias to each row.
  Var add_rowvec(Var x, Var bias) {
    const TensorT<T>&X = val(x), &B = val(bias);
    if (X.ndim() != 2 || B.ndim() != 1 || B.shape[0] != X.cols())
      throw DimError("tape.add_rowvec: shapes " + shape_str(X.shape) + " vs " +
                     shape_str(B.shape));
    TensorT<T> out = X;
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) += B.data[j];
    Var c = push_op(std::move(out), {x, bias}, "tape.add_rowvec");
    if (node(c).requires_grad) {
      int xi = x.idx, bi = bias.idx, ci = c.idx;
      nodes_[c.idx].back = [xi, bi, ci](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const std::size_t r = g.shape[0], cC = g.shape[1];
        tp.acc_grad(xi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < cC; ++j) dst.data[j] += g.data[i * cC + j];
        });
      };
    }
    return c;
  }

  Var mul(Var a, Var b) {
    const TensorT<T>&A = val(a), &B = val(b);
    if (!A.same_shape(B))
      throw DimError("tape.mul: shapes " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    TensorT<T> out = A;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= B.data[i];
    Var c = push_op(std::move(out), {a, b}, "tape.mul");
    if (node(c).requires_grad) {
      int ai = a.idx, bi = b.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, bi, ci](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const auto& A2 = tp.nodes_[ai].value;
        const auto& B2 = tp.nodes_[bi].value;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i] * B2.data[i];
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i] * A2.data[i];
        });
      };
    }
    return c;
  }

  Var scale(Var a, T s) {
    TensorT<T> out = val(a);
    for (T& v : out.data) v *= s;
    Var c = push_op(std::move(out), {a}, "tape.scale");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci, s](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i] * s;
        });
      };
    }
    return c;
  }

  Var matmul(Var a, Var b) {
    const TensorT<T>&A = val(a), &B = val(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows())
      throw DimError("tape.matmul: incompatible shapes " + shape_str(A.shape) + " and " +
                     shape_str(B.shape));
    const std::size_t p = A.rows(), q = A.cols(), s = B.cols();
    TensorT<T> out = TensorT<T>::zeros({p, s});
    mm_nn(A.data.data(), B.data.data(), out.data.data(), p, q, s, false);
    Var c = push_op(std::move(out), {a, b}, "tape.matmul");
    if (node(c).requires_grad) {
      int ai = a.idx, bi = b.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, bi, ci, p, q, s](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const auto& A2 = tp.nodes_[ai].value;
        const auto& B2 = tp.nodes_[bi].value;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {  // dA = dC * B^T
          mm_nt(g.data.data(), B2.data.data(), dst.data.data(), p, s, q, true);
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {  // dB = A^T * dC
          mm_tn(A2.data.data(), g.data.data(), dst.data.data(), p, q, s, true);
        });
      };
    }
    return c;
  }

  // a [p x q] times b [s x q] transposed -> [p x s]
  Var matmul_nt(Var a, Var b) {
    const TensorT<T>&A = val(a), &B = val(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.cols())
      throw DimError("tape.matmul_nt: incompatible shapes " + shape_str(A.shape) + " and " +
                     shape_str(B.shape));
    const std::size_t p = A.rows(), q = A.cols(), s = B.rows();
    TensorT<T> out = TensorT<T>::zeros({p, s});
    mm_nt(A.data.data(), B.data.data(), out.data.data(), p, q, s, false);
    Var c = push_op(std::move(out), {a, b}, "tape.matmul_nt");
    if (node(c).requires_grad) {
      int ai = a.idx, bi = b.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, bi, ci, p, q, s](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const auto& A2 = tp.nodes_[ai].value;
        const auto& B2 = tp.nodes_[bi].value;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {  // dA = dC * B
          mm_nn(g.data.data(), B2.data.data(), dst.data.data(), p, s, q, true);
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {  // dB = dC^T * A
          mm_tn(g.data.data(), A2.data.data(), dst.data.data(), p, s, q, true);
        });
      };
    }
    return c;
  }

  // Row-wise softmax of (x + additive_mask); the mask is a constant.
  Var softmax_rows(Var x, const TensorT<T>* additive_mask = nullptr) {
    const TensorT<T>& X = val(x);
    if (X.ndim() != 2) throw DimError("tape.softmax: expected 2-d, got " + shape_str(X.shape));
    if (additive_mask && !additive_mask->same_shape(X))
      throw DimError("tape.softmax: mask shape " + shape_str(additive_mask->shape) +
                     " vs input " + shape_str(X.shape));
    if (!X.all_finite()) throw NumericError("tape.softmax: non-finite input");
    const std::size_t r = X.rows(), n = X.cols();
    TensorT<T> out = TensorT<T>::zeros(X.shape);
    for (std::size_t i = 0; i < r; ++i) {
      const T* src = X.row_ptr(i);
      const T* msk = additive_mask ? additive_mask->row_ptr(i) : nullptr;
      T* dst = out.row_ptr(i);
      T mx = src[0] + (msk ? msk[0] : T{0});
      for (std::size_t j = 1; j < n; ++j) {
        T z = src[j] + (msk ? msk[j] : T{0});
        if (z > mx) mx = z;
      }
      T sum{0};
      for (std::size_t j = 0; j < n; ++j) {
        T z = src[j] + (msk ? msk[j] : T{0});
        dst[j] = std::exp(z - mx);
        sum += dst[j];
      }
      for (std::size_t j = 0; j < n; ++j) dst[j] /= sum;
    }
    Var c = push_op(std::move(out), {x}, "tape.softmax");
    if (node(c).requires_grad) {
      int xi = x.idx, ci = c.idx;
      nodes_[c.idx].back = [xi, ci](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const auto& y = tp.nodes_[ci].value;
        const std::size_t r2 = y.shape[0], n2 = y.shape[1];
        tp.acc_grad(xi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r2; ++i) {
            const T* yr = y.row_ptr(i);
            const T* gr = g.data.data() + i * n2;
            T dotv{0};
            for (std::size_t j = 0; j < n2; ++j) dotv += gr[j] * yr[j];
            T* dr = dst.data.data() + i * n2;
            for (std::size_t j = 0; j < n2; ++j) dr[j] += (gr[j] - dotv) * yr[j];
          }
        });
      };
    }
    return c;
  }

  // Row-wise layer norm with affine gain/bias over the last axis.
  Var layer_norm(Var x, Var gain, Var bias, T eps) {
    const TensorT<T>&X = val(x), &G = val(gain), &B = val(bias);
    if (X.ndim() != 2 || G.ndim() != 1 || B.ndim() != 1 || G.shape[0] != X.cols() ||
        B.shape[0] != X.cols())
      throw DimError("tape.layer_norm: shapes " + shape_str(X.shape) + ", " + shape_str(G.shape) +
                     ", " + shape_str(B.shape));
    const std::size_t r = X.rows(), n = X.cols();
    TensorT<T> out = TensorT<T>::zeros(X.shape);
    std::vector<T> xhat(r * n), inv_s(r);
    for (std::size_t i = 0; i < r; ++i) {
      const T* src = X.row_ptr(i);
      T mu{0};
      for (std::size_t j = 0; j < n; ++j) mu += src[j];
      mu /= static_cast<T>(n);
      T var{0};
      for (std::size_t j = 0; j < n; ++j) var += (src[j] - mu) * (src[j] - mu);
      var /= static_cast<T>(n);
      const T is = T{1} / std::sqrt(var + eps);
      inv_s[i] = is;
      T* dst = out.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) {
        const T xh = (src[j] - mu) * is;
        xhat[i * n + j] = xh;
        dst[j] = xh * G.data[j] + B.data[j];
      }
    }
    Var c = push_op(std::move(out), {x, gain, bias}, "tape.layer_norm");
    if (node(c).requires_grad) {
      int xi = x.idx, gi = gain.idx, bi = bias.idx, ci = c.idx;
      nodes_[c.idx].back = [xi, gi, bi, ci, xhat = std::move(xhat), inv_s = std::move(inv_s), r,
                            n](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const auto& G2 = tp.nodes_[gi].value;
        tp.acc_grad(xi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r; ++i) {
            const T* gr = g.data.data() + i * n;
            const T* xh = xhat.data() + i * n;
            T mean_u{0}, mean_ux{0};
            for (std::size_t j = 0; j < n; ++j) {
              const T u = gr[j] * G2.data[j];
              mean_u += u;
              mean_ux += u * xh[j];
            }
            mean_u /= static_cast<T>(n);
            mean_ux /= static_cast<T>(n);
            T* dr = dst.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
              const T u = gr[j] * G2.data[j];
              dr[j] += (u - mean_u - xh[j] * mean_ux) * inv_s[i];
            }
          }
        });
        tp.acc_grad(gi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < n; ++j)
              dst.data[j] += g.data[i * n + j] * xhat[i * n + j];
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < n; ++j) dst.data[j] += g.data[i * n + j];
        });
      };
    }
    return c;
  }

  // Embedding lookup over a split id space: ids < split_id read rows of
  // table_low, ids >= split_id read rows of table_high (id - split_id).
  // table_high may be invalid when no high ids occur.
  Var embed(const std::vector<std::int32_t>& ids, Var table_low, Var table_high,
            std::int32_t split_id) {
    const TensorT<T>& L = val(table_low);
    if (L.ndim() != 2) throw DimError("tape.embed: table must be 2-d");
    const std::size_t e = L.cols();
    const TensorT<T>* H = nullptr;
    if (table_high.valid()) {
      H = &val(table_high);
      if (H->ndim() != 2 || H->cols() != e)
        throw DimError("tape.embed: mismatched table widths");
    }
    const std::int32_t low_n = static_cast<std::int32_t>(L.rows());
    const std::int32_t high_n = H ? static_cast<std::int32_t>(H->rows()) : 0;
    if (split_id > low_n) throw DimError("tape.embed: split_id exceeds low table");
    TensorT<T> out = TensorT<T>::zeros({ids.size(), e});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::int32_t id = ids[i];
      if (id < 0 || id >= split_id + high_n)
        throw VocabError("tape.embed: token id " + std::to_string(id) + " out of range [0, " +
                         std::to_string(split_id + high_n) + ")");
      const T* src = (id < split_id) ? L.row_ptr(static_cast<std::size_t>(id))
                                     : H->row_ptr(static_cast<std::size_t>(id - split_id));
      T* dst = out.row_ptr(i);
      for (std::size_t j = 0; j < e; ++j) dst[j] = src[j];
    }
    std::vector<Var> parents = {table_low};
    if (table_high.valid()) parents.push_back(table_high);
    Var c = push_op(std::move(out), parents, "tape.embed");
    if (node(c).requires_grad) {
      int li = table_low.idx, hi = table_high.valid() ? table_high.idx : -1, ci = c.idx;
      nodes_[c.idx].back = [li, hi, ci, ids, split_id, e](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(li, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] < split_id)
              for (std::size_t j = 0; j < e; ++j)
                dst.data[static_cast<std::size_t>(ids[i]) * e + j] += g.data[i * e + j];
        });
        if (hi >= 0)
          tp.acc_grad(hi, [&](TensorT<T>& dst) {
            for (std::size_t i = 0; i < ids.size(); ++i)
              if (ids[i] >= split_id)
                for (std::size_t j = 0; j < e; ++j)
                  dst.data[static_cast<std::size_t>(ids[i] - split_id) * e + j] +=
                      g.data[i * e + j];
          });
      };
    }
    return c;
  }

  Var concat_rows(Var a, Var b) {
    const TensorT<T>&A = val(a), &B = val(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.cols())
      throw DimError("tape.concat_rows: shapes " + shape_str(A.shape) + " vs " +
                     shape_str(B.shape));
    TensorT<T> out = TensorT<T>::zeros({A.rows() + B.rows(), A.cols()});
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<long>(A.numel()));
    Var c = push_op(std::move(out), {a, b}, "tape.concat_rows");
    if (node(c).requires_grad) {
      int ai = a.idx, bi = b.idx, ci = c.idx;
      const std::size_t an = A.numel();
      nodes_[c.idx].back = [ai, bi, ci, an](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < an; ++i) dst.data[i] += g.data[i];
        });
        tp.acc_grad(bi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += g.data[an + i];
        });
      };
    }
    return c;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimError("tape.concat_cols: no parts");
    const std::size_t r = val(parts[0]).rows();
    std::size_t total_c = 0;
    for (Var p : parts) {
      const TensorT<T>& P = val(p);
      if (P.ndim() != 2 || P.rows() != r) throw DimError("tape.concat_cols: row mismatch");
      total_c += P.cols();
    }
    TensorT<T> out = TensorT<T>::zeros({r, total_c});
    std::size_t off = 0;
    for (Var p : parts) {
      const TensorT<T>& P = val(p);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, off + j) = P.at(i, j);
      off += P.cols();
    }
    Var c = push_op(std::move(out), parts, "tape.concat_cols");
    if (node(c).requires_grad) {
      std::vector<int> idxs;
      std::vector<std::size_t> widths;
      for (Var p : parts) {
        idxs.push_back(p.idx);
        widths.push_back(val(p).cols());
      }
      int ci = c.idx;
      nodes_[c.idx].back = [idxs, widths, ci, r, total_c](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        std::size_t off2 = 0;
        for (std::size_t k = 0; k < idxs.size(); ++k) {
          const std::size_t w = widths[k];
          tp.acc_grad(idxs[k], [&](TensorT<T>& dst) {
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < w; ++j)
                dst.data[i * w + j] += g.data[i * total_c + off2 + j];
          });
          off2 += w;
        }
      };
    }
    return c;
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const TensorT<T>& A = val(a);
    if (A.ndim() != 2 || c0 >= c1 || c1 > A.cols())
      throw DimError("tape.slice_cols: bad range on " + shape_str(A.shape));
    const std::size_t r = A.rows(), w = c1 - c0, ac = A.cols();
    TensorT<T> out = TensorT<T>::zeros({r, w});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, j) = A.at(i, c0 + j);
    Var c = push_op(std::move(out), {a}, "tape.slice_cols");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci, c0, r, w, ac](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) dst.data[i * ac + c0 + j] += g.data[i * w + j];
        });
      };
    }
    return c;
  }

  Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const TensorT<T>& A = val(a);
    if (A.ndim() != 2) throw DimError("tape.gather_rows: expected 2-d");
    for (std::size_t ri : rows)
      if (ri >= A.rows())
        throw DimError("tape.gather_rows: row " + std::to_string(ri) + " out of " +
                       std::to_string(A.rows()));
    const std::size_t n = A.cols();
    TensorT<T> out = TensorT<T>::zeros({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(A.row_ptr(rows[i]), A.row_ptr(rows[i]) + n, out.row_ptr(i));
    Var c = push_op(std::move(out), {a}, "tape.gather_rows");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci, rows = std::move(rows), n](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) dst.data[rows[i] * n + j] += g.data[i * n + j];
        });
      };
    }
    return c;
  }

  Var reshape(Var a, std::vector<std::size_t> new_shape) {
    const TensorT<T>& A = val(a);
    if (shape_numel(new_shape) != A.numel())
      throw DimError("tape.reshape: " + shape_str(A.shape) + " to " + shape_str(new_shape) +
                     " changes element count");
    TensorT<T> out;
    out.shape = std::move(new_shape);
    out.data = A.data;
    Var c = push_op(std::move(out), {a}, "tape.reshape");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
        });
      };
    }
    return c;
  }

  Var gelu(Var a) {
    const TensorT<T>& A = val(a);
    TensorT<T> out = A;
    for (T& v : out.data) {
      const double x = static_cast<double>(v);
      v = static_cast<T>(0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)));
    }
    Var c = push_op(std::move(out), {a}, "tape.gelu");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci](Tape& tp) {
        const auto& g = tp.nodes_[ci].grad;
        const auto& x = tp.nodes_[ai].value;
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < g.numel(); ++i) {
            const double xv = static_cast<double>(x.data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(xv * 0.7071067811865476));
            const double pdf = std::exp(-0.5 * xv * xv) * 0.3989422804014327;
            dst.data[i] += g.data[i] * static_cast<T>(cdf + xv * pdf);
          }
        });
      };
    }
    return c;
  }

  Var sum(Var a) {
    const TensorT<T>& A = val(a);
    T s{0};
    for (T v : A.data) s += v;
    Var c = push_op(TensorT<T>::scalar(s), {a}, "tape.sum");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci](Tape& tp) {
        const T g = tp.nodes_[ci].grad.data[0];
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (T& v : dst.data) v += g;
        });
      };
    }
    return c;
  }

  // Sum over rows of -log softmax(logits)[target]; the NLL of a token span.
  Var nll_sum(Var logits, const std::vector<std::int32_t>& targets) {
    const TensorT<T>& X = val(logits);
    if (X.ndim() != 2 || X.rows() != targets.size())
      throw DimError("tape.nll_sum: logits " + shape_str(X.shape) + " vs " +
                     std::to_string(targets.size()) + " targets");
    const std::size_t r = X.rows(), n = X.cols();
    std::vector<T> probs(r * n);
    double loss = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::int32_t t = targets[i];
      if (t < 0 || static_cast<std::size_t>(t) >= n)
        throw VocabError("tape.nll_sum: target id " + std::to_string(t) + " out of range");
      const T* src = X.row_ptr(i);
      T mx = src[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, src[j]);
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double ez = std::exp(static_cast<double>(src[j] - mx));
        probs[i * n + j] = static_cast<T>(ez);
        sum += ez;
      }
      for (std::size_t j = 0; j < n; ++j)
        probs[i * n + j] = static_cast<T>(static_cast<double>(probs[i * n + j]) / sum);
      loss += std::log(sum) - static_cast<double>(src[t] - mx);
    }
    Var c = push_op(TensorT<T>::scalar(static_cast<T>(loss)), {logits}, "tape.nll_sum");
    if (node(c).requires_grad) {
      int xi = logits.idx, ci = c.idx;
      nodes_[c.idx].back = [xi, ci, probs = std::move(probs), targets, r, n](Tape& tp) {
        const T g = tp.nodes_[ci].grad.data[0];
        tp.acc_grad(xi, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < n; ++j) dst.data[i * n + j] += g * probs[i * n + j];
            dst.data[i * n + static_cast<std::size_t>(targets[i])] -= g;
          }
        });
      };
    }
    return c;
  }

  // Mean squared error against a constant target: sum((a-t)^2) / numel.
  Var mse_mean(Var a, TensorT<T> target) {
    const TensorT<T>& A = val(a);
    if (!A.same_shape(target))
      throw DimError("tape.mse_mean: shapes " + shape_str(A.shape) + " vs " +
                     shape_str(target.shape));
    double loss = 0;
    for (std::size_t i = 0; i < A.numel(); ++i) {
      const double dv = static_cast<double>(A.data[i]) - static_cast<double>(target.data[i]);
      loss += dv * dv;
    }
    loss /= static_cast<double>(A.numel());
    Var c = push_op(TensorT<T>::scalar(static_cast<T>(loss)), {a}, "tape.mse_mean");
    if (node(c).requires_grad) {
      int ai = a.idx, ci = c.idx;
      nodes_[c.idx].back = [ai, ci, target = std::move(target)](Tape& tp) {
        const T g = tp.nodes_[ci].grad.data[0];
        const auto& A2 = tp.nodes_[ai].value;
        const T inv = T{1} / static_cast<T>(A2.numel());
        tp.acc_grad(ai, [&](TensorT<T>& dst) {
          for (std::size_t i = 0; i < dst.numel(); ++i)
            dst.data[i] += g * T{2} * (A2.data[i] - target.data[i]) * inv;
        });
      };
    }
    return c;
  }

  // ---- backward ------------------------------------------------------------

  void backward(Var loss) {
    Node& ln = nodes_mut(loss);
    if (ln.value.numel() != 1) throw TapeError("tape.backward: loss must be a scalar");
    if (backward_done_) throw TapeError("tape.backward: tape already replayed");
    backward_done_ = true;
    if (!ln.requires_grad) return;  // loss is constant; all gradients stay zero
    ensure_grad(loss.idx);
    ln.grad.data[0] = T{1};
    ln.touched = true;
    for (int i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.touched && n.back) n.back(*this);
    }
  }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    bool touched = false;
    std::function<void(Tape&)> back;
  };

  static std::atomic<std::uint32_t>& next_id() {
    static std::atomic<std::uint32_t> counter{1};
    return counter;
  }

  const Node& node(Var v) const {
    if (!v.valid() || v.tape_id != id_ || static_cast<std::size_t>(v.idx) >= nodes_.size())
      throw TapeError("tape: variable not on this tape (missing gradient)");
    return nodes_[static_cast<std::size_t>(v.idx)];
  }
  Node& nodes_mut(Var v) { return const_cast<Node&>(node(v)); }
  const TensorT<T>& val(Var v) const { return node(v).value; }

  Var push(TensorT<T> value, bool requires_grad, std::function<void(Tape&)> back) {
    require_finite(value, "tape");
    return push_unchecked(std::move(value), requires_grad, std::move(back));
  }

  Var push_unchecked(TensorT<T> value, bool requires_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1, id_};
  }

  Var push_op(TensorT<T> value, const std::vector<Var>& parents, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite value produced");
    bool rg = false;
    for (Var p : parents) rg = rg || node(p).requires_grad;
    return push_unchecked(std::move(value), rg, {});
  }

  void ensure_grad(int idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.grad.numel() == 0) n.grad = TensorT<T>::zeros(n.value.shape);
  }

  // Runs fn on the grad buffer of idx if that node participates in gradients.
  template <class Fn>
  void acc_grad(int idx, Fn&& fn) {
    if (idx < 0) return;
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.requires_grad) return;
    ensure_grad(idx);
    fn(n.grad);
    n.touched = true;
  }

  std::uint32_t id_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

template <class T>
using Var = typename Tape<T>::Var;

// Additive causal mask: position i may attend to positions <= i.
template <class T>
TensorT<T> causal_mask(std::size_t n) {
  TensorT<T> m = TensorT<T>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = T{-1e9};
  return m;
}

}  // namespace chef
