//! Measurement harness: per-step trajectory error against the uncached
//! teacher, CUR and FLOP speedup reporting, hand-made baseline schedules and
//! ranked comparison tables.

mod heuristic;
mod report;
mod trajectory;

pub use heuristic::{make_heuristic, match_cur, random_router, HeuristicSchedule, HARD_LOGIT};
pub use report::{compare, compare_csv, evaluate, evaluate_against, EvalReport};
pub use trajectory::{final_errors, mse_curve, trajectory_mse, EvalSet};
