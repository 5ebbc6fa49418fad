//! Structure-exploiting SQP for trajectory optimization.
//!
//! Each SQP step solves the stagewise LQ subproblem with a Riccati recursion
//! on the nullspace of the equality constraints; inequalities are handled by a
//! regularized primal-dual interior-point modification of the LQ data with a
//! Mehrotra predictor-corrector barrier update.

pub mod barrier;
pub mod bench;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod projection;
pub mod riccati;
pub mod sqp;
pub mod verify;

pub use error::{ModelError, OracleError, StepError};
pub use model::{
    kkt_residual, EqMode, EqualityModes, Iterate, KktResidual, OcpProblem, QuadraticTerminal,
    StageDims, StageJacobians, StageModel, StageValues, TerminalCost,
};
pub use problems::{problem_library, ProblemParams, PROBLEMS};
pub use sqp::{solve, solve_default, SolveReport, SolveStatus, SolverSettings};
