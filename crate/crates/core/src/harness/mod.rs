//! Experiment runner behind the command-line tool: configs, the experiment
//! table preset, grids, CSV output and SVG reports.

mod config;
mod grid;
mod report;

pub use config::{
    table1, table1_id, AblationAxis, DatasetSpec, ExperimentSpec, ModelSpec, CONFIG_KEYS, DEFAULT_CIFAR_SUBSET,
    DEFAULT_SYNTHETIC_SIZE,
};
pub use grid::{
    companion_paths, desk_model, desk_spec, finding_batch, finding_epsilon, load_dataset, nonincreasing_within,
    read_records, run_experiment, run_grid, run_grid_with, summarize, write_grid_outputs, write_records,
    write_summary, ExperimentResult, Summary, TrendCheck, CSV_HEADER, DESK_DATA_SEED, DESK_SEPARATION,
    DESK_TEST_PER_CLASS, DESK_WIDTHS,
};
pub use report::{render_svg, report, Chart, Series};

pub use crate::dp::MetricsRecord;

/// Environment variable naming the default CIFAR-10 directory.
pub const DATA_DIR_ENV: &str = "DPKIT_DATA_DIR";
