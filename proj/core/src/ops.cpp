#include "o2na/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "o2na/errors.hpp"

namespace o2na {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<RowMat, 0, Strided>;
using ConstBlockMap = Eigen::Map<const RowMat, 0, Strided>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

MatMap as_mat(std::span<double> d, std::size_t r, std::size_t c) {
  return MatMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

ConstMatMap as_mat(std::span<const double> d, std::size_t r, std::size_t c) {
  return ConstMatMap(d.data(), static_cast<Eigen::Index>(r),
                     static_cast<Eigen::Index>(c));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

Tensor like(const Tensor& x) { return Tensor(x.shape(), 0.0); }

double stable_softplus(double u) {
  return u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

double stable_sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  as_mat(out.data(), m, n).noalias() =
      as_mat(std::as_const(a).data(), m, k) * as_mat(std::as_const(b).data(), k, n);
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      auto g = as_mat(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) {
        as_mat(a.grad(), m, k).noalias() +=
            g * as_mat(std::as_const(b).data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        as_mat(b.grad(), k, n).noalias() +=
            as_mat(std::as_const(a).data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = like(a);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto g = std::as_const(out).grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto tg = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out = like(a);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (tape.wants({&a})) {
    tape.record(out, [a, out, factor]() mutable {
      auto g = std::as_const(out).grad();
      auto ag = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor broadcast_add_rows(Tape& tape, const Tensor& x, const Tensor& rows) {
  const std::size_t r = x.rows(), d = x.cols(), groups = rows.rows();
  if (rows.cols() != d || groups == 0 || r % groups != 0) {
    throw DimensionError("broadcast_add_rows: cannot broadcast " +
                         shape_string(rows.shape()) + " over " +
                         shape_string(x.shape()));
  }
  const std::size_t per = r / groups;
  Tensor out({r, d});
  auto o = out.data();
  auto xs = x.data(), rs = rows.data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t g = i / per;
    for (std::size_t j = 0; j < d; ++j) o[i * d + j] = xs[i * d + j] + rs[g * d + j];
  }
  if (tape.wants({&x, &rows})) {
    tape.record(out, [x, rows, out, r, d, per]() mutable {
      auto g = std::as_const(out).grad();
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
      }
      if (rows.requires_grad()) {
        auto rg = rows.grad();
        for (std::size_t i = 0; i < r; ++i) {
          const std::size_t grp = i / per;
          for (std::size_t j = 0; j < d; ++j) rg[grp * d + j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = like(x);
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] > 0 ? xs[i] : 0.0;
  if (tape.wants({&x})) {
    tape.record(out, [x, out]() mutable {
      auto g = std::as_const(out).grad();
      auto xs = std::as_const(x).data();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xs[i] > 0) xg[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = like(x);
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(xs[i]);
  if (tape.wants({&x})) {
    tape.record(out, [x, out]() mutable {
      auto g = std::as_const(out).grad();
      auto y = std::as_const(out).data();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor concat_last_dim(Tape& tape, const Tensor& a, const Tensor& b) {
  const std::size_t r = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != r) {
    throw DimensionError("concat_last_dim: row counts differ, " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out({r, p + q});
  auto o = out.data();
  auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(as.begin() + i * p, p, o.begin() + i * (p + q));
    std::copy_n(bs.begin() + i * q, q, o.begin() + i * (p + q) + p);
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, r, p, q]() mutable {
      auto g = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < p; ++j) ag[i * p + j] += g[i * (p + q) + j];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < q; ++j) bg[i * q + j] += g[i * (p + q) + p + j];
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b,
                   std::size_t groups) {
  const std::size_t d = a.cols();
  if (b.cols() != d || groups == 0 || a.rows() % groups || b.rows() % groups) {
    throw DimensionError("concat_rows: incompatible " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + " for " +
                         std::to_string(groups) + " groups");
  }
  const std::size_t pa = a.rows() / groups, pb = b.rows() / groups;
  const std::size_t per = pa + pb;
  Tensor out({groups * per, d});
  auto o = out.data();
  auto as = a.data(), bs = b.data();
  for (std::size_t g = 0; g < groups; ++g) {
    std::copy_n(as.begin() + g * pa * d, pa * d, o.begin() + g * per * d);
    std::copy_n(bs.begin() + g * pb * d, pb * d, o.begin() + (g * per + pa) * d);
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, groups, pa, pb, per, d]() mutable {
      auto og = std::as_const(out).grad();
      for (std::size_t g = 0; g < groups; ++g) {
        if (a.requires_grad()) {
          auto ag = a.grad();
          for (std::size_t i = 0; i < pa * d; ++i)
            ag[g * pa * d + i] += og[g * per * d + i];
        }
        if (b.requires_grad()) {
          auto bg = b.grad();
          for (std::size_t i = 0; i < pb * d; ++i)
            bg[g * pb * d + i] += og[(g * per + pa) * d + i];
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table,
                        std::span<const int> ids) {
  const std::size_t rows = table.rows(), d = table.cols();
  if (ids.empty()) throw ContractError("embedding_lookup: no ids");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " outside table of " + std::to_string(rows) + " rows");
    }
  }
  Tensor out({ids.size(), d});
  auto o = out.data();
  auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(t.begin() + static_cast<std::size_t>(ids[i]) * d, d, o.begin() + i * d);
  }
  if (tape.wants({&table})) {
    std::vector<int> saved(ids.begin(), ids.end());
    tape.record(out, [table, out, saved = std::move(saved), d]() mutable {
      auto g = std::as_const(out).grad();
      auto tg = table.grad();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        const std::size_t row = static_cast<std::size_t>(saved[i]);
        for (std::size_t j = 0; j < d; ++j) tg[row * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
  const std::size_t r = x.rows(), c = x.cols();
  if (axis != 0 && axis != 1) {
    throw DimensionError("softmax: axis must be 0 or 1, got " + std::to_string(axis));
  }
  // Slices: `count` of them, each `len` long with stride `stride`.
  const std::size_t count = axis == 1 ? r : c;
  const std::size_t len = axis == 1 ? c : r;
  const std::size_t stride = axis == 1 ? 1 : c;
  const std::size_t step = axis == 1 ? c : 1;
  Tensor out({r, c});
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t base = s * step;
    double mx = kNegInf;
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xs[base + i * stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xs[base + i * stride] - mx);
      o[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) o[base + i * stride] /= total;
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, count, len, stride, step]() mutable {
      auto g = std::as_const(out).grad();
      auto y = std::as_const(out).data();
      auto xg = x.grad();
      for (std::size_t s = 0; s < count; ++s) {
        const std::size_t base = s * step;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          dot += g[base + i * stride] * y[base + i * stride];
        }
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t at = base + i * stride;
          xg[at] += y[at] * (g[at] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps) {
  const std::size_t r = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) +
                         "/" + shape_string(bias.shape()) + " do not match width " +
                         std::to_string(d));
  }
  Tensor out({r, d});
  auto o = out.data();
  auto xs = x.data(), gs = gain.data(), bs = bias.data();
  auto normalized = std::make_shared<std::vector<double>>(r * d);
  auto inv_std = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xs[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xs[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xs[i * d + j] - mean) * inv;
      (*normalized)[i * d + j] = h;
      o[i * d + j] = gs[j] * h + bs[j];
    }
  }
  if (tape.wants({&x, &gain, &bias})) {
    tape.record(out, [x, gain, bias, out, normalized, inv_std, r, d]() mutable {
      auto g = std::as_const(out).grad();
      auto gs = std::as_const(gain).data();
      const auto& h = *normalized;
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * h[i * d + j];
      }
      if (bias.requires_grad()) {
        auto bg = bias.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < d; ++j) bg[j] += g[i * d + j];
      }
      if (x.requires_grad()) {
        auto xg = x.grad();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < r; ++i) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gs[j];
            mean_dh += dh;
            mean_dh_h += dh * h[i * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gs[j];
            xg[i * d + j] +=
                (*inv_std)[i] * (dh - mean_dh - h[i * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

Tensor mean_pool(Tape& tape, const Tensor& x, std::size_t groups) {
  if (x.size() == 0) throw ContractError("mean_pool: empty input");
  const std::size_t r = x.rows(), d = x.cols();
  if (groups == 0 || r % groups != 0) {
    throw DimensionError("mean_pool: " + std::to_string(r) +
                         " rows do not split into " + std::to_string(groups) +
                         " groups");
  }
  const std::size_t per = r / groups;
  const double inv = 1.0 / static_cast<double>(per);
  Tensor out({groups, d});
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t g = i / per;
    for (std::size_t j = 0; j < d; ++j) o[g * d + j] += xs[i * d + j];
  }
  for (auto& v : o) v *= inv;
  if (tape.wants({&x})) {
    tape.record(out, [x, out, r, d, per, inv]() mutable {
      auto g = std::as_const(out).grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < r; ++i) {
        const std::size_t grp = i / per;
        for (std::size_t j = 0; j < d; ++j) xg[i * d + j] += g[grp * d + j] * inv;
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tape.wants({&x})) {
    tape.record(out, [x, out]() mutable {
      const double g = std::as_const(out).grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor weighted_sum(Tape& tape, std::span<const Tensor> terms,
                    std::span<const double> weights) {
  if (terms.size() != weights.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(terms.size()) +
                         " terms but " + std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].item();
    needs = needs || terms[i].requires_grad();
  }
  Tensor out = Tensor::scalar(total);
  if (tape.recording() && needs) {
    std::vector<Tensor> saved(terms.begin(), terms.end());
    std::vector<double> w(weights.begin(), weights.end());
    tape.record(out, [saved, w, out]() mutable {
      const double g = std::as_const(out).grad()[0];
      for (std::size_t i = 0; i < saved.size(); ++i) {
        if (saved[i].requires_grad()) saved[i].grad()[0] += w[i] * g;
      }
    });
  }
  return out;
}

Tensor cross_entropy_rows(Tape& tape, const Tensor& logits,
                          std::span<const int> targets, int ignore_id,
                          std::size_t* counted) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(r) + " rows");
  }
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw IndexError("cross_entropy_rows: target " + std::to_string(t) +
                       " outside " + std::to_string(c) + " classes");
    }
    ++count;
  }
  if (counted) *counted = count;
  auto xs = logits.data();
  auto probs = std::make_shared<std::vector<double>>(r * c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] == ignore_id) continue;
    double mx = kNegInf;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xs[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(xs[i * c + j] - mx);
      (*probs)[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
    total += mx + std::log(z) - xs[i * c + static_cast<std::size_t>(targets[i])];
  }
  const double mean = count ? total / static_cast<double>(count) : 0.0;
  Tensor out = Tensor::scalar(mean);
  if (count && tape.wants({&logits})) {
    std::vector<int> saved(targets.begin(), targets.end());
    tape.record(out, [logits, out, probs, saved = std::move(saved), ignore_id, r, c,
                      count]() mutable {
      const double g = std::as_const(out).grad()[0] / static_cast<double>(count);
      auto lg = logits.grad();
      for (std::size_t i = 0; i < r; ++i) {
        if (saved[i] == ignore_id) continue;
        for (std::size_t j = 0; j < c; ++j) lg[i * c + j] += g * (*probs)[i * c + j];
        lg[i * c + static_cast<std::size_t>(saved[i])] -= g;
      }
    });
  }
  return out;
}

Tensor logistic_loss(Tape& tape, const Tensor& logits, const Tensor& labels,
                     LogisticLabels convention) {
  require_same_shape(logits, labels, "logistic_loss");
  const std::size_t r = logits.rows();
  auto z = logits.data(), y = labels.data();
  std::vector<double> signs(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw DataError("logistic_loss: labels must be 0/1, got " + std::to_string(y[i]));
    }
    signs[i] = convention == LogisticLabels::kSigned ? (y[i] > 0.5 ? 1.0 : -1.0) : y[i];
    total += stable_softplus(-signs[i] * z[i]);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(r));
  if (tape.wants({&logits})) {
    tape.record(out, [logits, out, signs = std::move(signs), r]() mutable {
      const double g = std::as_const(out).grad()[0] / static_cast<double>(r);
      auto zs = std::as_const(logits).data();
      auto lg = logits.grad();
      for (std::size_t i = 0; i < zs.size(); ++i) {
        // d/dz softplus(-s z) = -s * sigmoid(-s z)
        lg[i] += g * -signs[i] * stable_sigmoid(-signs[i] * zs[i]);
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng* rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  if (!rng) throw ContractError("dropout needs an rng");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = unif(*rng) >= rate ? keep_scale : 0.0;
  Tensor out = like(x);
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] * mask[i];
  if (tape.wants({&x})) {
    tape.record(out, [x, out, mask = std::move(mask)]() mutable {
      auto g = std::as_const(out).grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionLayout& layout) {
  const std::size_t batch = layout.batch, heads = layout.heads;
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (batch == 0 || q.rows() % batch || k.rows() % batch) {
    throw DimensionError("attention: rows do not split into " +
                         std::to_string(batch) + " samples");
  }
  const std::size_t lq = q.rows() / batch, lk = k.rows() / batch;
  const std::size_t dk = d / heads;
  if (!layout.key_lengths.empty() && layout.key_lengths.size() != batch) {
    throw DimensionError("attention: key_lengths has " +
                         std::to_string(layout.key_lengths.size()) +
                         " entries for batch " + std::to_string(batch));
  }
  if (layout.additive_mask &&
      (layout.additive_mask->rows() != lq || layout.additive_mask->cols() != lk)) {
    throw DimensionError("attention: mask " +
                         shape_string(layout.additive_mask->shape()) +
                         " does not match " + std::to_string(lq) + "x" +
                         std::to_string(lk));
  }
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool use_dropout = layout.dropout > 0.0;
  if (use_dropout && !layout.rng) throw ContractError("attention dropout needs an rng");

  const std::size_t block = lq * lk;
  auto probs = std::make_shared<std::vector<double>>(batch * heads * block);
  auto drop = std::make_shared<std::vector<double>>();
  if (use_dropout) drop->resize(probs->size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = use_dropout ? 1.0 / (1.0 - layout.dropout) : 1.0;

  Tensor out({batch * lq, d});
  auto qs = q.data(), ks = k.data(), vs = v.data();
  auto os = out.data();
  RowMat scores(lq, lk);
  RowMat dropped(lq, lk);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t valid = layout.key_lengths.empty() ? lk : layout.key_lengths[b];
    if (valid == 0 || valid > lk) {
      throw DimensionError("attention: sample " + std::to_string(b) + " has " +
                           std::to_string(valid) + " valid keys of " +
                           std::to_string(lk));
    }
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlockMap qh(qs.data() + b * lq * d + h * dk, lq, dk, Strided(d));
      ConstBlockMap kh(ks.data() + b * lk * d + h * dk, lk, dk, Strided(d));
      ConstBlockMap vh(vs.data() + b * lk * d + h * dk, lk, dk, Strided(d));
      scores.noalias() = (qh * kh.transpose()) * scale_factor;
      double* p = probs->data() + (b * heads + h) * block;
      for (std::size_t i = 0; i < lq; ++i) {
        double mx = kNegInf;
        for (std::size_t j = 0; j < lk; ++j) {
          double s = scores(i, j);
          if (layout.additive_mask) s += layout.additive_mask->at(i, j);
          if (j >= valid) s = kNegInf;
          scores(i, j) = s;
          mx = std::max(mx, s);
        }
        if (mx == kNegInf) {
          throw ContractError("attention: query row " + std::to_string(i) +
                              " has no visible key");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          const double e = scores(i, j) == kNegInf ? 0.0 : std::exp(scores(i, j) - mx);
          p[i * lk + j] = e;
          total += e;
        }
        for (std::size_t j = 0; j < lk; ++j) p[i * lk + j] /= total;
      }
      ConstMatMap pm(p, lq, lk);
      BlockMap oh(os.data() + b * lq * d + h * dk, lq, dk, Strided(d));
      if (use_dropout) {
        double* m = drop->data() + (b * heads + h) * block;
        for (std::size_t i = 0; i < block; ++i) {
          m[i] = unif(*layout.rng) >= layout.dropout ? keep_scale : 0.0;
          dropped.data()[i] = p[i] * m[i];
        }
        oh.noalias() = dropped * vh;
      } else {
        oh.noalias() = pm * vh;
      }
    }
  }
  if (layout.weights_out) layout.weights_out->assign(probs->begin(), probs->end());

  if (tape.wants({&q, &k, &v})) {
    tape.record(out, [q, k, v, out, probs, drop, batch, heads, lq, lk, d, dk,
                      scale_factor]() mutable {
      const std::size_t block = lq * lk;
      auto og = std::as_const(out).grad();
      auto qs = std::as_const(q).data(), ks = std::as_const(k).data(),
           vs = std::as_const(v).data();
      double* qg = q.requires_grad() ? q.grad().data() : nullptr;
      double* kg = k.requires_grad() ? k.grad().data() : nullptr;
      double* vg = v.requires_grad() ? v.grad().data() : nullptr;
      RowMat pd(lq, lk), dp(lq, lk), ds(lq, lk);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          ConstBlockMap qh(qs.data() + b * lq * d + h * dk, lq, dk, Strided(d));
          ConstBlockMap kh(ks.data() + b * lk * d + h * dk, lk, dk, Strided(d));
          ConstBlockMap vh(vs.data() + b * lk * d + h * dk, lk, dk, Strided(d));
          ConstBlockMap goh(og.data() + b * lq * d + h * dk, lq, dk, Strided(d));
          ConstMatMap pm(probs->data() + (b * heads + h) * block, lq, lk);
          const bool dropped = !drop->empty();
          if (dropped) {
            ConstMatMap mm(drop->data() + (b * heads + h) * block, lq, lk);
            pd = pm.cwiseProduct(mm);
          } else {
            pd = pm;
          }
          if (vg) {
            BlockMap vgh(vg + b * lk * d + h * dk, lk, dk, Strided(d));
            vgh.noalias() += pd.transpose() * goh;
          }
          if (!qg && !kg) continue;
          dp.noalias() = goh * vh.transpose();
          if (dropped) {
            ConstMatMap mm(drop->data() + (b * heads + h) * block, lq, lk);
            dp = dp.cwiseProduct(mm);
          }
          for (std::size_t i = 0; i < lq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < lk; ++j) dot += dp(i, j) * pm(i, j);
            for (std::size_t j = 0; j < lk; ++j) ds(i, j) = pm(i, j) * (dp(i, j) - dot);
          }
          if (qg) {
            BlockMap qgh(qg + b * lq * d + h * dk, lq, dk, Strided(d));
            qgh.noalias() += (ds * kh) * scale_factor;
          }
          if (kg) {
            BlockMap kgh(kg + b * lk * d + h * dk, lk, dk, Strided(d));
            kgh.noalias() += (ds.transpose() * qh) * scale_factor;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace o2na
