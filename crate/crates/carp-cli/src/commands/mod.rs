pub mod best_of_n;
pub mod encode;
pub mod eval_pairs;
pub mod fit_decoder;
pub mod pipeline;
pub mod plot_export;
pub mod score_sas;
pub mod synth_gen;
pub mod train_rm;
pub mod verify_theory;
