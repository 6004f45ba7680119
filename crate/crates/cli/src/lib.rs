//! Pipeline stages behind the `jointcast` executable.

pub mod commands;
pub mod config;
pub mod layout;
pub mod workers;

pub use config::{ConfigError, RunConfig};

use layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    MakeDataset,
    Train,
    Forecast,
    Evaluate,
    Uq,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] =
        [Stage::Simulate, Stage::MakeDataset, Stage::Train, Stage::Forecast, Stage::Evaluate, Stage::Uq, Stage::Report];
}

/// Validate `cfg` and run one stage.
pub fn execute(stage: Stage, cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    match stage {
        Stage::Simulate => commands::simulate::run(cfg, &layout),
        Stage::MakeDataset => commands::dataset::run(cfg, &layout),
        Stage::Train => commands::train::run(cfg, &layout),
        Stage::Forecast => commands::forecast::run(cfg, &layout),
        Stage::Evaluate => commands::evaluate::run(cfg, &layout),
        Stage::Uq => commands::uq::run(cfg, &layout),
        Stage::Report => commands::report::run(cfg, &layout),
    }
}

/// Process exit status for a failed run: 2 configuration, 3 numerical, 4 IO.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<jointcast::Error>() {
            return match e {
                jointcast::Error::Io(_) | jointcast::Error::Format(_) => 4,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}
