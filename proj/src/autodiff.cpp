#include <planealign/autodiff.hpp>

#include <cmath>

namespace planealign::ad {

const MatX& Var::value() const { return tape_->value(id_); }
const MatX& Var::grad() const { return tape_->grad(id_); }

double Var::item() const {
  const MatX& v = value();
  if (v.size() != 1) throw Error(ErrorCode::InvalidArgument, "item() on a non-scalar node");
  return v(0, 0);
}

Var Tape::constant(MatX value) {
  nodes_.push_back({std::move(value), MatX(), false, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(MatX value) {
  nodes_.push_back({std::move(value), MatX(), true, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::record(MatX value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  nodes_.push_back({std::move(value), MatX(), needs, needs ? std::move(backward) : nullptr});
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const MatX& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(const Var& loss) {
  if (loss.value().size() != 1)
    throw Error(ErrorCode::InvalidArgument, "backward() needs a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(loss.id(), MatX::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    const MatX upstream = n.grad;
    n.backward(*this, upstream);
  }
  // Leaves that received nothing report a zero gradient of the right shape.
  for (auto& n : nodes_)
    if (n.requires_grad && n.grad.size() == 0)
      n.grad = MatX::Zero(n.value.rows(), n.value.cols());
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::InvalidArgument, std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b},
                         [ia, ib](Tape& t, const MatX& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                           if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                         });
}

Var matmul_nt(const Var& a, const Var& b) {
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value().transpose(), {a, b},
                         [ia, ib](Tape& t, const MatX& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                         });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const MatX& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const MatX& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape& t, const MatX& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseQuotient(b.value()), {a, b},
                         [ia, ib](Tape& t, const MatX& g) {
                           const MatX& bv = t.value(ib);
                           t.accumulate(ia, g.cwiseQuotient(bv));
                           if (t.requires_grad(ib))
                             t.accumulate(ib, -g.cwiseProduct(t.value(ia))
                                                   .cwiseQuotient(bv.cwiseProduct(bv)));
                         });
}

Var scale(const Var& a, double k) {
  const auto ia = a.id();
  return a.tape().record(a.value() * k, {a},
                         [ia, k](Tape& t, const MatX& g) { t.accumulate(ia, g * k); });
}

Var add_scalar(const Var& a, double k) {
  const auto ia = a.id();
  return a.tape().record((a.value().array() + k).matrix(), {a},
                         [ia](Tape& t, const MatX& g) { t.accumulate(ia, g); });
}

Var transpose(const Var& a) {
  const auto ia = a.id();
  return a.tape().record(a.value().transpose(), {a},
                         [ia](Tape& t, const MatX& g) { t.accumulate(ia, g.transpose()); });
}

Var add_row(const Var& a, const Var& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw Error(ErrorCode::InvalidArgument, "add_row: bias must be 1 x cols");
  const auto ia = a.id(), ib = b.id();
  MatX out = a.value();
  out.rowwise() += b.value().row(0);
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const MatX& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& v) {
  if (v.cols() != 1 || v.rows() != a.rows())
    throw Error(ErrorCode::InvalidArgument, "mul_col: factor must be rows x 1");
  const auto ia = a.id(), iv = v.id();
  MatX out = a.value().array().colwise() * v.value().col(0).array();
  return a.tape().record(std::move(out), {a, v}, [ia, iv](Tape& t, const MatX& g) {
    t.accumulate(ia, (g.array().colwise() * t.value(iv).col(0).array()).matrix());
    if (t.requires_grad(iv))
      t.accumulate(iv, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

Var tanh(const Var& a) {
  const auto ia = a.id();
  const std::size_t out = a.tape().size();
  return a.tape().record(a.value().array().tanh().matrix(), {a},
                         [ia, out](Tape& t, const MatX& g) {
                           const MatX& y = t.value(out);
                           t.accumulate(ia, (g.array() * (1.0 - y.array().square())).matrix());
                         });
}

Var log(const Var& a) {
  const auto ia = a.id();
  return a.tape().record(a.value().array().log().matrix(), {a},
                         [ia](Tape& t, const MatX& g) {
                           t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
                         });
}

Var exp(const Var& a) {
  const auto ia = a.id();
  const std::size_t out = a.tape().size();
  return a.tape().record(a.value().array().exp().matrix(), {a},
                         [ia, out](Tape& t, const MatX& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value(out)));
                         });
}

Var sparse_matmul(const Eigen::SparseMatrix<double, Eigen::RowMajor>& s, const Var& a) {
  const auto ia = a.id();
  MatX out = s * a.value();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, const MatX& g) {
    t.accumulate(ia, MatX(s.transpose() * g));
  });
}

Var normalize_rows(const Var& a, double eps) {
  const auto ia = a.id();
  const MatX& x = a.value();
  const VecX norms = x.rowwise().norm();
  MatX y = MatX::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (norms[i] > eps) y.row(i) = x.row(i) / norms[i];
  const std::size_t out = a.tape().size();
  return a.tape().record(std::move(y), {a}, [ia, out, norms, eps](Tape& t, const MatX& g) {
    const MatX& y = t.value(out);
    MatX dx = MatX::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (norms[i] <= eps) continue;
      dx.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / norms[i];
    }
    t.accumulate(ia, dx);
  });
}

Var row_norm(const Var& a) {
  const auto ia = a.id();
  const std::size_t out = a.tape().size();
  return a.tape().record(MatX(a.value().rowwise().norm()), {a},
                         [ia, out](Tape& t, const MatX& g) {
                           const MatX& x = t.value(ia);
                           const MatX& n = t.value(out);
                           MatX dx = MatX::Zero(x.rows(), x.cols());
                           for (Eigen::Index i = 0; i < x.rows(); ++i)
                             if (n(i, 0) > 0.0) dx.row(i) = x.row(i) * (g(i, 0) / n(i, 0));
                           t.accumulate(ia, dx);
                         });
}

Var row_dot(const Var& a, const Var& b) {
  check_same_shape(a, b, "row_dot");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(MatX(a.value().cwiseProduct(b.value()).rowwise().sum()), {a, b},
                         [ia, ib](Tape& t, const MatX& g) {
                           const auto gc = g.col(0).array();
                           t.accumulate(ia, (t.value(ib).array().colwise() * gc).matrix());
                           t.accumulate(ib, (t.value(ia).array().colwise() * gc).matrix());
                         });
}

Var cross2(const Var& a, const Var& b) {
  check_same_shape(a, b, "cross2");
  if (a.cols() != 2) throw Error(ErrorCode::InvalidArgument, "cross2 needs n x 2 inputs");
  const auto ia = a.id(), ib = b.id();
  const MatX& av = a.value();
  const MatX& bv = b.value();
  MatX out = av.col(0).cwiseProduct(bv.col(1)) - av.col(1).cwiseProduct(bv.col(0));
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const MatX& g) {
    const MatX& av = t.value(ia);
    const MatX& bv = t.value(ib);
    MatX da(av.rows(), 2), db(av.rows(), 2);
    da.col(0) = g.col(0).cwiseProduct(bv.col(1));
    da.col(1) = -g.col(0).cwiseProduct(bv.col(0));
    db.col(0) = -g.col(0).cwiseProduct(av.col(1));
    db.col(1) = g.col(0).cwiseProduct(av.col(0));
    t.accumulate(ia, da);
    t.accumulate(ib, db);
  });
}

Var gather_rows(const Var& a, std::span<const Eigen::Index> rows) {
  const auto ia = a.id();
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  MatX out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(Eigen::Index(k)) = a.value().row(idx[k]);
  return a.tape().record(std::move(out), {a}, [ia, idx](Tape& t, const MatX& g) {
    MatX dx = MatX::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t k = 0; k < idx.size(); ++k) dx.row(idx[k]) += g.row(Eigen::Index(k));
    t.accumulate(ia, dx);
  });
}

namespace {

MatX softmax_rows_value(const MatX& x) {
  MatX y = x;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    y.row(i).array() -= y.row(i).maxCoeff();
    y.row(i) = y.row(i).array().exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(const Var& a) {
  const auto ia = a.id();
  const std::size_t out = a.tape().size();
  return a.tape().record(softmax_rows_value(a.value()), {a},
                         [ia, out](Tape& t, const MatX& g) {
                           const MatX& y = t.value(out);
                           const VecX inner = g.cwiseProduct(y).rowwise().sum();
                           MatX dx = y.array() * (g.array().colwise() - inner.array());
                           t.accumulate(ia, dx);
                         });
}

Var log_softmax_rows(const Var& a) {
  const auto ia = a.id();
  const MatX& x = a.value();
  MatX y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  const std::size_t out = a.tape().size();
  return a.tape().record(std::move(y), {a}, [ia, out](Tape& t, const MatX& g) {
    const MatX p = t.value(out).array().exp();
    const VecX gsum = g.rowwise().sum();
    MatX dx = g - MatX(p.array().colwise() * gsum.array());
    t.accumulate(ia, dx);
  });
}

Var row_max(const Var& a) {
  const auto ia = a.id();
  const MatX& x = a.value();
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.rows()));
  MatX out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, 0) = x.row(i).maxCoeff(&arg[std::size_t(i)]);
  return a.tape().record(std::move(out), {a}, [ia, arg](Tape& t, const MatX& g) {
    MatX dx = MatX::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t i = 0; i < arg.size(); ++i) dx(Eigen::Index(i), arg[i]) = g(Eigen::Index(i), 0);
    t.accumulate(ia, dx);
  });
}

Var diag(const Var& a) {
  if (a.rows() != a.cols()) throw Error(ErrorCode::InvalidArgument, "diag of a non-square node");
  const auto ia = a.id();
  return a.tape().record(MatX(a.value().diagonal()), {a}, [ia](Tape& t, const MatX& g) {
    MatX dx = MatX::Zero(t.value(ia).rows(), t.value(ia).cols());
    dx.diagonal() = g.col(0);
    t.accumulate(ia, dx);
  });
}

Var sum(const Var& a) {
  const auto ia = a.id();
  return a.tape().record(MatX::Constant(1, 1, a.value().sum()), {a},
                         [ia](Tape& t, const MatX& g) {
                           t.accumulate(ia, MatX::Constant(t.value(ia).rows(),
                                                           t.value(ia).cols(), g(0, 0)));
                         });
}

Var huber(const Var& a, double delta) {
  const auto ia = a.id();
  MatX out = a.value().unaryExpr([delta](double r) {
    const double ar = std::abs(r);
    return ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  });
  return a.tape().record(std::move(out), {a}, [ia, delta](Tape& t, const MatX& g) {
    const MatX d = t.value(ia).unaryExpr([delta](double r) {
      return std::abs(r) <= delta ? r : (r > 0.0 ? delta : -delta);
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

}  // namespace planealign::ad
