//! Experiment harness: JSON specs, named recipes, artifacts and checks.

mod io;
mod manifest;
mod plot;
mod recipes;
mod spec;
mod verify;

pub use io::{read_points_csv, write_json, write_points_csv, write_rows_csv};
pub use manifest::{RunManifest, RunRecord, MANIFEST_NAME};
pub use plot::{plot_files, scatter_svg};
pub use recipes::{run, shift_table, summary_name, RunOptions, ShiftRow, ShiftTable, ToyShiftRow};
pub use spec::{
    CapacitySpec, DecompositionSpec, EvalSpec, ExperimentSpec, ModelSpec, SamplerSpec, ShortcutSpec, Space, RECIPES,
};
pub use verify::{intrinsic_atoms, verify, Check, VerifyReport, DECOMPOSITION_TOL, GRADIENT_TOL, SHIFT_TOL};
