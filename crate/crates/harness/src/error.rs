use thiserror::Error;

/// Pipeline stage an error came from, used to tag diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Denoise,
    Features,
    TrainCnn,
    Extract,
    TrainGbdt,
    Evaluate,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Denoise => "denoise",
            Stage::Features => "features",
            Stage::TrainCnn => "train-cnn",
            Stage::Extract => "extract",
            Stage::TrainGbdt => "train-gbdt",
            Stage::Evaluate => "evaluate",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("[config] {0}")]
    Config(String),
    #[error("prediction/close misalignment: {0}")]
    IndexMisalignment(String),
    #[error("variants failed: {}", .0.iter().map(|(v, e)| format!("{v}: {e}")).collect::<Vec<_>>().join("; "))]
    PartialFailure(Vec<(String, String)>),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Tags any error with the stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| HarnessError::Stage { stage, source: Box::new(e) })
    }
}
