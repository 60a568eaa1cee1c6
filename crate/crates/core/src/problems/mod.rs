//! Benchmark problems: the policeman-vs-burglar matrix game with its
//! backward-forward splitting operator, and a finite-sum quadratic with a
//! known root.

mod game;
mod quadratic;
mod simplex;

pub use game::{bfs_operator, duality_gap, game_operator, generate_game, BfsRule, BfsScaling, GameInstance};
pub use quadratic::{quadratic_finitesum, QuadraticProblem, QuadraticRule};
pub use simplex::{simplex_project, simplex_project_into};
