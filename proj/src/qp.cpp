#include "mdt/qp.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace mdt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Givens-based update of the J = L^-T Q factor and the triangular R when a
// constraint with transformed normal d joins the active set.
bool add_constraint(Matrix& R, Matrix& J, Vector& d, int& iq, double& r_norm) {
    const Index n = J.rows();
    for (Index j = n - 1; j >= iq + 1; --j) {
        double cc = d[j - 1], ss = d[j];
        const double h = std::hypot(cc, ss);
        if (h == 0.0) continue;
        d[j] = 0.0;
        ss /= h;
        cc /= h;
        if (cc < 0.0) {
            cc = -cc;
            ss = -ss;
            d[j - 1] = -h;
        } else {
            d[j - 1] = h;
        }
        const double xny = ss / (1.0 + cc);
        for (Index k = 0; k < n; ++k) {
            const double t1 = J(k, j - 1), t2 = J(k, j);
            J(k, j - 1) = t1 * cc + t2 * ss;
            J(k, j) = xny * (t1 + J(k, j - 1)) - t2;
        }
    }
    ++iq;
    R.col(iq - 1).head(iq) = d.head(iq);
    if (std::abs(d[iq - 1]) <= kEps * r_norm) return false;
    r_norm = std::max(r_norm, std::abs(d[iq - 1]));
    return true;
}

void delete_constraint(Matrix& R, Matrix& J, Eigen::VectorXi& A, Vector& u, int me, int& iq, int l) {
    const Index n = J.rows();
    int qq = -1;
    for (int i = me; i < iq; ++i) {
        if (A[i] == l) {
            qq = i;
            break;
        }
    }
    if (qq < 0) return;
    for (int i = qq; i < iq - 1; ++i) {
        A[i] = A[i + 1];
        u[i] = u[i + 1];
        R.col(i) = R.col(i + 1);
    }
    A[iq - 1] = A[iq];
    u[iq - 1] = u[iq];
    A[iq] = 0;
    u[iq] = 0.0;
    for (int j = 0; j < iq; ++j) R(j, iq - 1) = 0.0;
    --iq;
    if (iq == 0) return;
    for (int j = qq; j < iq; ++j) {
        double cc = R(j, j), ss = R(j + 1, j);
        const double h = std::hypot(cc, ss);
        if (h == 0.0) continue;
        cc /= h;
        ss /= h;
        R(j + 1, j) = 0.0;
        if (cc < 0.0) {
            R(j, j) = -h;
            cc = -cc;
            ss = -ss;
        } else {
            R(j, j) = h;
        }
        const double xny = ss / (1.0 + cc);
        for (int k = j + 1; k < iq; ++k) {
            const double t1 = R(j, k), t2 = R(j + 1, k);
            R(j, k) = t1 * cc + t2 * ss;
            R(j + 1, k) = xny * (t1 + R(j, k)) - t2;
        }
        for (Index k = 0; k < n; ++k) {
            const double t1 = J(k, j), t2 = J(k, j + 1);
            J(k, j) = t1 * cc + t2 * ss;
            J(k, j + 1) = xny * (J(k, j) + t1) - t2;
        }
    }
}

}  // namespace

QpResult solve_qp(const Matrix& G, const Vector& g0, const Matrix& CE, const Vector& ce0, const Matrix& CI,
                  const Vector& ci0, int max_iter) {
    const Index n = G.rows();
    const int me = static_cast<int>(CE.cols());
    const int mi = static_cast<int>(CI.cols());
    if (G.cols() != n || g0.size() != n || (me > 0 && CE.rows() != n) || (mi > 0 && CI.rows() != n) ||
        ce0.size() != me || ci0.size() != mi)
        throw ShapeError("qp", "inconsistent problem dimensions");

    QpResult res;
    res.multipliers = Vector::Zero(mi);
    res.eq_multipliers = Vector::Zero(me);

    Eigen::LLT<Matrix> chol(G);
    if (chol.info() != Eigen::Success) throw DomainError("qp", "G is not positive definite");
    Matrix J = chol.matrixU().solve(Matrix::Identity(n, n));
    Matrix R = Matrix::Zero(n, n);
    const double c1 = G.trace(), c2 = J.trace();
    double r_norm = 1.0;

    Vector x = chol.solve(-g0);
    double f = 0.5 * g0.dot(x);
    Vector d(n), z(n), r(me + mi + 1), s(mi), u = Vector::Zero(me + mi + 1);
    Eigen::VectorXi A = Eigen::VectorXi::Zero(me + mi + 1);
    int iq = 0;

    auto compute_step = [&](const Vector& np) {
        d = J.transpose() * np;
        z = J.rightCols(n - iq) * d.tail(n - iq);
        if (iq > 0)
            r.head(iq) = R.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d.head(iq));
    };

    auto finish = [&](bool feasible) {
        res.x = x;
        res.objective = f;
        res.feasible = feasible;
        for (int k = 0; k < iq; ++k) {
            if (A[k] < 0) {
                res.eq_multipliers[-A[k] - 1] = u[k];
            } else {
                res.multipliers[A[k]] = u[k];
                res.active.push_back(A[k]);
            }
        }
        return res;
    };

    for (int i = 0; i < me; ++i) {
        const Vector np = CE.col(i);
        compute_step(np);
        double t2 = 0.0;
        if (z.squaredNorm() > kEps) t2 = (-np.dot(x) - ce0[i]) / z.dot(np);
        x += t2 * z;
        u[iq] = t2;
        if (iq > 0) u.head(iq) -= t2 * r.head(iq);
        f += 0.5 * t2 * t2 * z.dot(np);
        A[iq] = -i - 1;
        if (!add_constraint(R, J, d, iq, r_norm)) {
            res.blocking = -2;
            return finish(false);
        }
    }

    std::vector<bool> inactive(mi, true), allowed(mi, true);
    Vector x_old = x, u_old = u;
    Eigen::VectorXi A_old = A;
    int iq_old = iq;

    enum class Next { Select, Step, Done } next = Next::Select;
    int ip = -1;
    while (true) {
        if (++res.iterations > max_iter) {
            res.blocking = ip;
            return finish(false);
        }
        // Step 1: primal feasibility check.
        for (int i = me; i < iq; ++i) inactive[A[i]] = false;
        double psi = 0.0;
        for (int i = 0; i < mi; ++i) {
            s[i] = CI.col(i).dot(x) + ci0[i];
            psi += std::min(0.0, s[i]);
        }
        if (std::abs(psi) <= mi * kEps * c1 * c2 * 100.0) return finish(true);
        x_old = x;
        u_old = u;
        A_old = A;
        iq_old = iq;
        next = Next::Select;

        while (next != Next::Done) {
            if (next == Next::Select) {
                // Step 2: most violated inactive constraint.
                double ss = 0.0;
                ip = -1;
                for (int i = 0; i < mi; ++i) {
                    if (inactive[i] && allowed[i] && s[i] < ss) {
                        ss = s[i];
                        ip = i;
                    }
                }
                if (ip < 0) return finish(true);
                u[iq] = 0.0;
                A[iq] = ip;
                next = Next::Step;
            }
            const Vector np = CI.col(ip);
            compute_step(np);

            // Step 2b: partial (dual) and full (primal) step lengths.
            int l = -1;
            double t1 = kInf;
            for (int k = me; k < iq; ++k) {
                if (r[k] > 0.0 && u[k] / r[k] < t1) {
                    t1 = u[k] / r[k];
                    l = A[k];
                }
            }
            double t2 = kInf;
            if (z.squaredNorm() > kEps) {
                t2 = -s[ip] / z.dot(np);
                if (t2 < 0) t2 = kInf;
            }
            const double t = std::min(t1, t2);
            if (t >= kInf) {
                res.blocking = ip;
                return finish(false);
            }
            if (t2 >= kInf) {
                if (iq > 0) u.head(iq) -= t * r.head(iq);
                u[iq] += t;
                inactive[l] = true;
                delete_constraint(R, J, A, u, me, iq, l);
                continue;
            }
            x += t * z;
            f += t * z.dot(np) * (0.5 * t + u[iq]);
            if (iq > 0) u.head(iq) -= t * r.head(iq);
            u[iq] += t;
            if (t == t2) {
                if (!add_constraint(R, J, d, iq, r_norm)) {
                    allowed[ip] = false;
                    delete_constraint(R, J, A, u, me, iq, ip);
                    x = x_old;
                    u = u_old;
                    A = A_old;
                    iq = iq_old;
                    std::fill(inactive.begin(), inactive.end(), true);
                    for (int i = me; i < iq; ++i) inactive[A[i]] = false;
                    for (int i = 0; i < mi; ++i) s[i] = CI.col(i).dot(x) + ci0[i];
                    next = Next::Select;
                    continue;
                }
                inactive[ip] = false;
                next = Next::Done;
                continue;
            }
            inactive[l] = true;
            delete_constraint(R, J, A, u, me, iq, l);
            s[ip] = CI.col(ip).dot(x) + ci0[ip];
        }
    }
}

double kkt_residual(const Matrix& G, const Vector& g0, const Matrix& CE, const Vector& ce0, const Matrix& CI,
                    const Vector& ci0, const QpResult& res) {
    Vector grad = G * res.x + g0;
    if (CE.cols() > 0) grad -= CE * res.eq_multipliers;
    if (CI.cols() > 0) grad -= CI * res.multipliers;
    double worst = grad.cwiseAbs().maxCoeff();
    for (Index i = 0; i < CE.cols(); ++i) worst = std::max(worst, std::abs(CE.col(i).dot(res.x) + ce0[i]));
    for (Index i = 0; i < CI.cols(); ++i) {
        const double s = CI.col(i).dot(res.x) + ci0[i];
        worst = std::max({worst, -s, -res.multipliers[i], std::abs(res.multipliers[i] * s)});
    }
    return worst;
}

}  // namespace mdt
