#include "dmgp/cholesky.hpp"

#include <Eigen/Eigenvalues>
#include <sstream>

#include "dmgp/errors.hpp"

namespace dmgp {

CholeskyFactor cholesky(const Eigen::MatrixXd& Amat,
                        const std::vector<double>& jitter_schedule) {
  require(Amat.rows() == Amat.cols(), "cholesky: matrix must be square");
  // Overflowed inputs are a numeric failure, not a caller bug; report them
  // through the same channel as indefiniteness so optimizers can recover.
  if (!Amat.allFinite())
    throw NotPositiveDefinite("cholesky: matrix has non-finite entries");
  require((Amat - Amat.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
          "cholesky: matrix must be symmetric to 1e-10");
  require(!jitter_schedule.empty(), "cholesky: empty jitter schedule");

  const Eigen::Index n = Amat.rows();
  for (double jitter : jitter_schedule) {
    Eigen::MatrixXd shifted = Amat;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) {
      CholeskyFactor f;
      f.lower = llt.matrixL();
      // LLT can report success on borderline semidefinite input; insist on
      // strictly positive pivots so downstream log determinants are finite.
      if (f.lower.diagonal().minCoeff() > 0.0) {
        f.jitter_used = jitter;
        return f;
      }
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Amat,
                                                    Eigen::EigenvaluesOnly);
  std::ostringstream msg;
  msg << "cholesky: not positive definite after jitter escalation (n=" << n
      << ", min eigenvalue estimate " << es.eigenvalues().minCoeff() << ")";
  throw NotPositiveDefinite(msg.str());
}

}  // namespace dmgp
