//! Scoring classifier, Inception Score, ablation runner and figures.

mod ablation;
mod classifier;
mod plot;
mod score;

pub use classifier::{
    cross_entropy, train_classifier, ClassifierConfig, ConvClassifier, TrainedClassifier, FEATURE_DIM,
};
pub use plot::{
    emit_bar_plot, emit_grid, emit_metric_plot, grid_canvas, legend_path, read_metrics, Canvas, GRID_BORDER,
    SERIES_COLORS,
};
pub use score::{inception_score, inception_score_from_probs, train_scorer, ScoreResult, Scorer, DEFAULT_SPLITS, KL_EPS};
pub use ablation::{
    generate_for_split, latest_checkpoint, load_scorer, run_ablation, save_scorer, score_generator,
    single_attribute_conditioning, train_color_oracle, AblationTable, ArmRow, ConditioningCheck,
};
