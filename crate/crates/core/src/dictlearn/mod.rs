//! Dictionary learning: sparse coding, the MOD update and the alternation.

pub mod l1;
pub mod learn;
pub mod mod_update;
pub mod score;

pub use l1::{soft_threshold, solve_l1, GramOperator, L1SolverParams, L1Solution};
pub use learn::{
    initial_dictionary, learn, normalize_unit_columns, AlternationRecord, AtomRefresh, CodingStrategy,
    InitStrategy, LearnOptions, LearnedDictionary,
};
pub use mod_update::{mod_update, ModUpdate};
pub use score::{score_recovery, RecoveryReport};
