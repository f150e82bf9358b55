#include <Eigen/Core>
#include <cmath>

#include "hourglass/flop_counter.hpp"
#include "hourglass/ops.hpp"

namespace hourglass {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;

using Idx = Eigen::Index;

struct Dims {
  std::size_t B, Lq, Lk, D, H, dh, Lr;
};

template <typename T>
Dims check_dims(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>* v, const Tensor<T>& r, const Tensor<T>& u,
                const Tensor<T>& pb, std::size_t heads, const AttentionGeometry& geom) {
  if (q.rank() != 3 || k.rank() != 3) {
    throw DimensionError("attention expects [B, L, d] queries/keys, got " + shape_str(q.shape()) + " and " +
                         shape_str(k.shape()));
  }
  Dims d{q.extent(0), q.extent(1), k.extent(1), q.extent(2), heads, 0, 0};
  if (k.extent(0) != d.B || k.extent(2) != d.D) {
    throw DimensionError("attention key shape " + shape_str(k.shape()) + " incompatible with queries " +
                         shape_str(q.shape()));
  }
  if (v && v->shape() != k.shape()) {
    throw DimensionError("attention value shape " + shape_str(v->shape()) + " != key shape " + shape_str(k.shape()));
  }
  if (heads == 0 || d.D % heads != 0) {
    throw DimensionError("attention width " + std::to_string(d.D) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  d.dh = d.D / heads;
  d.Lr = geom.rel_span(d.Lq);
  if (r.rank() != 2 || r.extent(1) != d.D) {
    throw DimensionError("relative embedding table shape " + shape_str(r.shape()) + " needs width " +
                         std::to_string(d.D));
  }
  if (r.extent(0) < d.Lr) {
    throw ConfigError("relative embedding table covers " + std::to_string(r.extent(0)) + " offsets but " +
                      std::to_string(d.Lr) + " are needed");
  }
  const Shape bias_shape{heads, d.dh};
  if (u.shape() != bias_shape || pb.shape() != bias_shape) {
    throw DimensionError("attention biases must have shape " + shape_str(bias_shape));
  }
  return d;
}

// Computes normalized weights for one (batch, head) pair into `p` (Lq x Lk).
template <typename T>
void head_weights(const Dims& d, const AttentionGeometry& geom, const T* q, const T* k, const T* r, const T* u,
                  const T* pb, RowMat<T>& qu, RowMat<T>& qv, RowMat<T>& p, RowMat<T>& bd) {
  const CStridedMap<T> qm(q, Idx(d.Lq), Idx(d.dh), Eigen::OuterStride<>(Idx(d.D)));
  const CStridedMap<T> km(k, Idx(d.Lk), Idx(d.dh), Eigen::OuterStride<>(Idx(d.D)));
  const CStridedMap<T> rm(r, Idx(d.Lr), Idx(d.dh), Eigen::OuterStride<>(Idx(d.D)));
  const Eigen::Map<const RowVec<T>> uv(u, Idx(d.dh));
  const Eigen::Map<const RowVec<T>> pv(pb, Idx(d.dh));
  qu = qm.rowwise() + uv;
  qv = qm.rowwise() + pv;
  p.noalias() = qu * km.transpose();
  bd.noalias() = qv * rm.transpose();
  FlopCounter::add(2ull * d.Lq * d.Lk * d.dh + 2ull * d.Lq * d.Lr * d.dh);
  const T inv = T(1) / std::sqrt(static_cast<T>(d.dh));
  using Arr = Eigen::Array<T, 1, Eigen::Dynamic>;
  for (std::size_t i = 0; i < d.Lq; ++i) {
    T* row = p.data() + i * d.Lk;
    // Offsets decrease with j, so the visible keys form one interval [lo, hi).
    std::size_t lo = d.Lk, hi = 0;
    for (std::size_t j = 0; j < d.Lk; ++j) {
      const std::int64_t delta = geom.qpos(i) - geom.kpos(j);
      if (geom.visible(delta)) {
        row[j] = (row[j] + bd(Idx(i), Idx(delta))) * inv;
        lo = std::min(lo, j);
        hi = j + 1;
      } else {
        // exp(masked - max) underflows to exactly zero.
        row[j] = T(0);
      }
    }
    if (lo >= hi) continue;
    Eigen::Map<Arr> vis(row + lo, Idx(hi - lo));
    vis = (vis - vis.maxCoeff()).exp();
    vis *= T(1) / vis.sum();
  }
}

}  // namespace

template <typename T>
Tensor<T> rel_attention_weights(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& r, const Tensor<T>& u,
                                const Tensor<T>& pb, std::size_t heads, const AttentionGeometry& geom) {
  const Dims d = check_dims(q, k, static_cast<const Tensor<T>*>(nullptr), r, u, pb, heads, geom);
  Tensor<T> w(Shape{d.B, d.H, d.Lq, d.Lk});
  RowMat<T> qu, qv, p(Idx(d.Lq), Idx(d.Lk)), bd;
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t h = 0; h < d.H; ++h) {
      head_weights(d, geom, q.ptr() + b * d.Lq * d.D + h * d.dh, k.ptr() + b * d.Lk * d.D + h * d.dh,
                   r.ptr() + h * d.dh, u.ptr() + h * d.dh, pb.ptr() + h * d.dh, qu, qv, p, bd);
      std::copy(p.data(), p.data() + p.size(), w.ptr() + (b * d.H + h) * d.Lq * d.Lk);
    }
  return w;
}

template <typename T>
Var<T> rel_attention_core(Var<T> q, Var<T> k, Var<T> v, Var<T> r, Var<T> u, Var<T> pb, std::size_t heads,
                          const AttentionGeometry& geom) {
  Graph<T>& graph = q.graph();
  const Dims d = check_dims(q.value(), k.value(), &v.value(), r.value(), u.value(), pb.value(), heads, geom);
  const std::vector<NodeId> ids{q.id(), k.id(), v.id(), r.id(), u.id(), pb.id()};
  bool need_grad = false;
  for (auto id : ids) need_grad = need_grad || graph.requires_grad(id);

  Tensor<T> out(Shape{d.B, d.Lq, d.D});
  Tensor<T> saved;
  if (need_grad) saved = Tensor<T>(Shape{d.B, d.H, d.Lq, d.Lk});
  {
    RowMat<T> qu, qv, p(Idx(d.Lq), Idx(d.Lk)), bd;
    for (std::size_t b = 0; b < d.B; ++b)
      for (std::size_t h = 0; h < d.H; ++h) {
        const std::size_t qo = b * d.Lq * d.D + h * d.dh;
        const std::size_t ko = b * d.Lk * d.D + h * d.dh;
        head_weights(d, geom, q.value().ptr() + qo, k.value().ptr() + ko, r.value().ptr() + h * d.dh,
                     u.value().ptr() + h * d.dh, pb.value().ptr() + h * d.dh, qu, qv, p, bd);
        const CStridedMap<T> vm(v.value().ptr() + ko, Idx(d.Lk), Idx(d.dh), Eigen::OuterStride<>(Idx(d.D)));
        StridedMap<T> om(out.ptr() + qo, Idx(d.Lq), Idx(d.dh), Eigen::OuterStride<>(Idx(d.D)));
        om.noalias() = p * vm;
        FlopCounter::add(2ull * d.Lq * d.Lk * d.dh);
        if (need_grad) std::copy(p.data(), p.data() + p.size(), saved.ptr() + (b * d.H + h) * d.Lq * d.Lk);
      }
  }

  return graph.record(std::move(out), ids, [ids, d, geom, saved = std::move(saved)](Graph<T>& g, NodeId self) {
    const Tensor<T>& go = *g.grad(Var<T>(&g, self));
    const Tensor<T>& qv_ = g.value(ids[0]);
    const Tensor<T>& kv_ = g.value(ids[1]);
    const Tensor<T>& vv_ = g.value(ids[2]);
    const Tensor<T>& rv_ = g.value(ids[3]);
    const Tensor<T>& uv_ = g.value(ids[4]);
    const Tensor<T>& pv_ = g.value(ids[5]);
    Tensor<T>* gq = g.grad_sink(ids[0]);
    Tensor<T>* gk = g.grad_sink(ids[1]);
    Tensor<T>* gv = g.grad_sink(ids[2]);
    Tensor<T>* gr = g.grad_sink(ids[3]);
    Tensor<T>* gu = g.grad_sink(ids[4]);
    Tensor<T>* gp = g.grad_sink(ids[5]);
    const T inv = T(1) / std::sqrt(static_cast<T>(d.dh));
    const auto stride = Eigen::OuterStride<>(Idx(d.D));
    RowMat<T> dp, ds, dbd, qu, qvv, dqu, dqv;
    for (std::size_t b = 0; b < d.B; ++b)
      for (std::size_t h = 0; h < d.H; ++h) {
        const std::size_t qo = b * d.Lq * d.D + h * d.dh;
        const std::size_t ko = b * d.Lk * d.D + h * d.dh;
        const Eigen::Map<const RowMat<T>> p(saved.ptr() + (b * d.H + h) * d.Lq * d.Lk, Idx(d.Lq), Idx(d.Lk));
        const CStridedMap<T> dom(go.ptr() + qo, Idx(d.Lq), Idx(d.dh), stride);
        const CStridedMap<T> qm(qv_.ptr() + qo, Idx(d.Lq), Idx(d.dh), stride);
        const CStridedMap<T> km(kv_.ptr() + ko, Idx(d.Lk), Idx(d.dh), stride);
        const CStridedMap<T> vm(vv_.ptr() + ko, Idx(d.Lk), Idx(d.dh), stride);
        const CStridedMap<T> rm(rv_.ptr() + h * d.dh, Idx(d.Lr), Idx(d.dh), stride);
        const Eigen::Map<const RowVec<T>> uvec(uv_.ptr() + h * d.dh, Idx(d.dh));
        const Eigen::Map<const RowVec<T>> pvec(pv_.ptr() + h * d.dh, Idx(d.dh));

        if (gv) {
          StridedMap<T> gvm(gv->ptr() + ko, Idx(d.Lk), Idx(d.dh), stride);
          gvm.noalias() += p.transpose() * dom;
        }
        dp.noalias() = dom * vm.transpose();
        const auto rowdot = (p.array() * dp.array()).rowwise().sum().eval();
        ds = (p.array() * (dp.array().colwise() - rowdot)) * inv;
        dbd.setZero(Idx(d.Lq), Idx(d.Lr));
        for (std::size_t i = 0; i < d.Lq; ++i) {
          for (std::size_t j = 0; j < d.Lk; ++j) {
            const std::int64_t delta = geom.qpos(i) - geom.kpos(j);
            if (geom.visible(delta)) dbd(Idx(i), Idx(delta)) = ds(Idx(i), Idx(j));
          }
        }
        qu = qm.rowwise() + uvec;
        qvv = qm.rowwise() + pvec;
        dqu.noalias() = ds * km;
        dqv.noalias() = dbd * rm;
        if (gk) {
          StridedMap<T> gkm(gk->ptr() + ko, Idx(d.Lk), Idx(d.dh), stride);
          gkm.noalias() += ds.transpose() * qu;
        }
        if (gr) {
          StridedMap<T> grm(gr->ptr() + h * d.dh, Idx(d.Lr), Idx(d.dh), stride);
          grm.noalias() += dbd.transpose() * qvv;
        }
        if (gq) {
          StridedMap<T> gqm(gq->ptr() + qo, Idx(d.Lq), Idx(d.dh), stride);
          gqm += dqu + dqv;
        }
        if (gu) {
          Eigen::Map<RowVec<T>> guv(gu->ptr() + h * d.dh, Idx(d.dh));
          guv += dqu.colwise().sum();
        }
        if (gp) {
          Eigen::Map<RowVec<T>> gpv(gp->ptr() + h * d.dh, Idx(d.dh));
          gpv += dqv.colwise().sum();
        }
      }
  });
}

template Var<float> rel_attention_core<float>(Var<float>, Var<float>, Var<float>, Var<float>, Var<float>, Var<float>,
                                              std::size_t, const AttentionGeometry&);
template Var<double> rel_attention_core<double>(Var<double>, Var<double>, Var<double>, Var<double>, Var<double>,
                                                Var<double>, std::size_t, const AttentionGeometry&);
template Tensor<float> rel_attention_weights<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                                    const Tensor<float>&, const Tensor<float>&, std::size_t,
                                                    const AttentionGeometry&);
template Tensor<double> rel_attention_weights<double>(const Tensor<double>&, const Tensor<double>&,
                                                      const Tensor<double>&, const Tensor<double>&,
                                                      const Tensor<double>&, std::size_t, const AttentionGeometry&);

}  // namespace hourglass
