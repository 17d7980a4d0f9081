//! Batch front end for loss-rank model selection: CSV and synthetic data,
//! family sweeps, JSON selection reports and brute-force oracle checks.

pub mod app;
pub mod dataio;
pub mod error;
pub mod oracle_cmd;
pub mod run;
pub mod sweep;

pub use dataio::{gen_synthetic, load_csv, LoadedData, SynthKind, SynthSpec};
pub use error::{CliError, Result};
pub use run::{run_selection, BaselineToggles, DataSource, RunConfig, SelectionReport};
pub use sweep::{Family, FamilySweep};
