pub mod eval;
pub mod gradcheck;
pub mod normcheck;
pub mod plot;
pub mod stats;
pub mod train;

pub use eval::{cmd_eval, EvalArgs};
pub use gradcheck::{cmd_gradcheck, GradcheckArgs};
pub use normcheck::{cmd_normcheck, NormcheckArgs};
pub use plot::{cmd_plot, PlotArgs};
pub use stats::{cmd_stats, StatsArgs};
pub use train::{cmd_train, run_experiment, TrainArgs};
