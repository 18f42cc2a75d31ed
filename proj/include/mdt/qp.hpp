#pragma once

#include <vector>

#include "mdt/common.hpp"

namespace mdt {

struct QpResult {
    Vector x;
    double objective = 0;
    bool feasible = false;
    std::vector<int> active;  // inequality indices active at the solution
    Vector multipliers;       // per inequality, 0 when inactive
    Vector eq_multipliers;
    int iterations = 0;
    int blocking = -1;  // inequality that could not be satisfied, or -1 (-2 for dependent equalities)
};

/// Goldfarb-Idnani dual active-set method for
///   min 1/2 x'Gx + g0'x  s.t.  CE'x + ce0 = 0,  CI'x + ci0 >= 0
/// with G symmetric positive definite. Constraint normals are the columns of CE / CI.
QpResult solve_qp(const Matrix& G, const Vector& g0, const Matrix& CE, const Vector& ce0, const Matrix& CI,
                  const Vector& ci0, int max_iter = 10000);

/// Largest of: stationarity |Gx + g0 - CE v - CI u|, primal violation, dual
/// infeasibility and complementarity |u_i s_i|.
double kkt_residual(const Matrix& G, const Vector& g0, const Matrix& CE, const Vector& ce0, const Matrix& CI,
                    const Vector& ci0, const QpResult& result);

}  // namespace mdt
